"""
Reports over a scored dataset
=============================

Take the bundled twenty-session capture and produce the reports a
clinic would read: a summary table, outlier flags, the correlation
structure between waves, and the quality distribution.
"""

from ecgmon import analytics
from ecgmon.sample_data import sample_dataset

dataset = sample_dataset()
print(f"{len(dataset)} sessions, columns {', '.join(analytics.COLUMNS)}")

# The summary table: count, mean, sample std and quartiles per column.
summary = analytics.describe(dataset)
fields = ("count", "mean", "std", "min", "q25", "q50", "q75", "max")

print("\nsummary")
print("        " + "".join(f"{name:>9}" for name in analytics.COLUMNS))
for field in fields:
    cells = (getattr(summary[name], field) for name in analytics.COLUMNS)
    print(f"  {field:<6}" + "".join(f"{v:9.2f}" for v in cells))

# Quartile fences flag the sessions a reviewer should look at first.
# A column's outliers sit outside q25 - 1.5*IQR or q75 + 1.5*IQR; on a
# dataset this saturated (three quarters of the R scores are 100) any
# imperfect capture trips a fence somewhere.
flagged: set[int] = set()
print("\noutliers by column")
for name in analytics.SCORE_COLUMNS:
    rows = analytics.iqr_outliers(dataset, name)
    flagged.update(rows)
    record_nos = ", ".join(str(int(dataset.row(i)[0])) for i in rows)
    print(f"  {name}: {record_nos or '(none)'}")
for name in ("RecordNo", "Age"):
    flagged.update(analytics.iqr_outliers(dataset, name))
print(f"  union across all columns: {len(flagged)} of {len(dataset)} sessions")

# Correlation structure. The tightest coupling is between the Q and S
# scores, which makes sense: both waves live inside the QRS complex, so
# a capture that garbles one tends to garble the other.
corr = analytics.correlation_matrix(dataset)
pairs = []
for i in range(len(analytics.COLUMNS)):
    for j in range(i + 1, len(analytics.COLUMNS)):
        pairs.append((abs(corr[i, j]), analytics.COLUMNS[i], analytics.COLUMNS[j], corr[i, j]))
pairs.sort(reverse=True)

print("\nstrongest correlations")
for _, a, b, value in pairs[:3]:
    print(f"  {a}-{b}  {value:.4f}")

# Ranked against the R score, the QRS neighbours lead and the P wave
# trails: R's detectability barely depends on atrial activity.
print("\ncorrelation with R")
for name, value in analytics.rank_against(dataset, "R"):
    print(f"  {name:<4} {value:.4f}")

# Finally the quality bands: mean wave score at or above 96 is
# Excellent, at or above 85 Acceptable, anything lower Poor.
print("\nquality distribution")
for label, entry in analytics.quality_distribution(dataset).items():
    print(f"  {label:<11} {entry['count']:>2}  {entry['pct']:.0f}%")
