"""
Exactly once over a flaky link
==============================

A proxy between the sensors and the server drops a third of the
acknowledgements and kills one connection in ten. Nodes retry until
acknowledged; the server discards the duplicates. The log on disk
replays to the same lattice as the live store.
"""

import asyncio
import tempfile
from pathlib import Path

from urbannoise.core import GeoPoint
from urbannoise.ingest import FaultProxy, Ingestor, IngestServer, replay
from urbannoise.node import RetryPolicy, Uplink, run_fleet
from urbannoise.soundscape import DiurnalProfile, ScenarioSpec, SensorSpec, generate_timeline

KEY = "demo"
spec = ScenarioSpec(
    seed=1,
    duration=3600,
    origin_epoch=1_700_000_000,
    sensors=tuple(SensorSpec(f"n{i}", GeoPoint(150.0 * i, 0.0)) for i in range(3)),
    ambient=DiurnalProfile.constant(52),
    snippet_rate=6.0,
)
log = Path(tempfile.mkdtemp()) / "ingest.ndjson"
ingestor = Ingestor(log_path=log)
# short timeouts keep the demo quick
policy = RetryPolicy(base=0.001, cap=0.05, ack_timeout=0.1, max_attempts=200)


async def stream():
    async with IngestServer(ingestor, KEY, port=0) as server:
        async with FaultProxy("127.0.0.1", server.port, drop_ack_rate=0.3, kill_rate=0.1, seed=1) as proxy:
            fleet = await run_fleet(spec, Uplink("127.0.0.1", proxy.port, KEY), generate_timeline(spec), policy)
            return fleet, proxy


fleet, proxy = asyncio.run(stream())
ingestor.close()

print(f"sent {fleet.frames} frames; proxy dropped {proxy.acks_dropped} acks and killed {proxy.kills} connections")
print(f"server discarded {ingestor.duplicates} duplicate batches, stored {ingestor.store.frame_count()} frames")
print("replay matches live store:", replay(log).state_digest() == ingestor.store.state_digest())
