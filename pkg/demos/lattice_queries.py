"""
Querying one month at several resolutions
=========================================

Thirty days of one-second frames go into the lattice in bulk, then we
read them back at hour, day and week resolution. The coarse queries
touch a handful of precomputed nodes instead of millions of frames.
"""

import time

import numpy as np

from urbannoise.lattice import LatticeLevel, LatticeStore, Stat, series_to_csv

rng = np.random.default_rng(0)
start = 1_700_000_000 - 1_700_000_000 % 86400
hours = np.arange(30 * 24)
weekday = (start // 86400 + 3 + hours // 24) % 7  # 0 is Monday
# louder by day, quieter at weekends
hourly = 48 + 12 * np.clip(np.sin((hours % 24 - 6) / 24 * 2 * np.pi), 0, None) - 4 * (weekday >= 5)
levels = np.repeat(hourly, 3600) + rng.normal(0, 2, 30 * 86400)
ts = np.arange(start, start + 30 * 86400)

store = LatticeStore()
t = time.perf_counter()
store.insert_arrays("kerbside", ts, np.round(levels * 1000).astype(np.int64))
print(f"loaded {store.frame_count():,} frames in {time.perf_counter() - t:.2f} s")

# %%

for level in (LatticeLevel.HOUR, LatticeLevel.DAY, LatticeLevel.WEEK):
    t = time.perf_counter()
    pts = store.series("kerbside", start, start + 30 * 86400, level, Stat.MEAN_DB)
    ms = (time.perf_counter() - t) * 1000
    print(f"{level.name:>5}: {len(pts):4d} points in {ms:6.2f} ms")

# %%
# A tiny text plot of daily mean and max.

days = store.series("kerbside", start, start + 14 * 86400, LatticeLevel.DAY)
peaks = store.series("kerbside", start, start + 14 * 86400, LatticeLevel.DAY, Stat.MAX)
for mean, peak in zip(days, peaks):
    bar = "#" * int((mean.value / 1000 - 40) * 2)
    print(f"{time.strftime('%a %d', time.gmtime(mean.start))}  {mean.value / 1000:5.1f} {bar:<30} max {peak.value / 1000:.1f}")

print(series_to_csv(days[:3]))
