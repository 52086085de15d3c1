"""
One simulated device session
============================

Synthesize a capture, let the device firmware score it, and watch the
upload gate accept a clean recording and reject a degraded one.
"""

from dataclasses import replace

from ecgmon import device, synth

# A clean capture: default beat shape, no noise, 10 seconds at 72 bpm.
config = synth.SynthConfig()
outcome = device.run_ecg_session(synth.synthesize(config), "demo-patient", 52)

print("clean capture")
print(f"  status  {outcome.status}")
print(f"  overall {outcome.overall_score}")
scores = outcome.scores
print("  scores  " + " ".join(
    f"{w.upper()}={device.render_score(getattr(scores, w))}" for w in "pqrst"))

# The record the device would upload:
print(f"  record  {device.to_csv_row(outcome.record)}")

# Now ruin the P wave: an electrode that picks up no atrial activity.
# Every beat still has a QRS complex and a T wave, so four of the five
# scores stay at 100 and the overall lands exactly on the 80 gate.
# The gate is strict, so exactly 80 is still a rejection.
flat_p = replace(synth.DEFAULT_TEMPLATE, p=synth.DEFAULT_TEMPLATE.p._replace(amplitude=0.0))
outcome = device.run_ecg_session(synth.synthesize(config, flat_p), "demo-patient", 52)

print("\ncapture without a P wave")
print(f"  status  {outcome.status}")
print(f"  overall {outcome.overall_score}")
print(f"  message {outcome.message}")

# Heartbeat mode is simpler: count pulse events over the 20 s window
# and scale by three.
pulse_config = synth.SynthConfig(heart_rate=84.0, duration=20.0)
reading = device.measure_heartbeat(synth.pulse_events(pulse_config), "demo-patient")
print(f"\nheartbeat window: {reading.bpm} bpm")
