"""ecgmon: simulated ECG/pulse telemetry with MQTT transport, durable
storage, an HTTP query gateway, and dataset analytics."""

__version__ = "0.1.0"
