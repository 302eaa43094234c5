"""
A week of noise around two construction sites
=============================================

Five sensors stream a simulated week over TCP into an in-process
ingest server. Afterwards we look for exceedance events and check
which after-hours construction complaints have acoustic evidence.
"""

import asyncio
import time

from urbannoise.analytics import AnalysisConfig, simulation_attributor, study_report
from urbannoise.ingest import Ingestor, IngestServer
from urbannoise.node import Uplink, run_fleet
from urbannoise.soundscape import demo_spec, generate_complaints, generate_timeline

KEY = "demo"
spec = demo_spec()
timeline = generate_timeline(spec)
print(f"{len(spec.sensors)} sensors, {spec.duration // 86400} days, {len(timeline)} emitted events")

# %%
# Stream every sensor through a real socket.

ingestor = Ingestor()


async def stream():
    async with IngestServer(ingestor, KEY, port=0) as server:
        return await run_fleet(spec, Uplink("127.0.0.1", server.port, KEY), timeline)


t = time.perf_counter()
fleet = asyncio.run(stream())
print(f"ingested {fleet.frames:,} frames in {time.perf_counter() - t:.1f} s")

# %%
# Detection and the complaint study. The attributor peeks at the
# simulation's ground truth, which a deployment would not have.

cfg = AnalysisConfig(tz_offset=spec.tz_offset)
complaints = generate_complaints(spec, timeline)
report = study_report(
    ingestor.store,
    {s.id: s.location for s in spec.sensors},
    complaints,
    (spec.origin_epoch, spec.end_epoch),
    cfg,
    simulation_attributor(spec, timeline),
)

for ev in report.events:
    local = time.gmtime(ev.peak_time + spec.tz_offset)
    print(f"  {ev.sensor}  {time.strftime('%a %H:%M', local)}  "
          f"peak {ev.peak / 1000:5.1f} dB  background {ev.background_at_peak / 1000:5.1f} dB  {ev.attributed.value}")

print("complaints by category:", report.complaint_counts())
print(f"after-hours construction complaints with evidence: "
      f"{report.with_evidence}/{len(report.after_hours_construction)}")
