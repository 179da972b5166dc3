import os
from functools import lru_cache

from dotenv import load_dotenv

load_dotenv()


@lru_cache(maxsize=1)
def get_telemetry_settings() -> dict[str, object]:
    batch_size = int(os.getenv("CIRCSENSE_TELEMETRY_BATCH_SIZE", "25"))
    flush_interval = float(os.getenv("CIRCSENSE_TELEMETRY_FLUSH_INTERVAL", "5"))
    hec_url = os.getenv("CIRCSENSE_HEC_URL", "")
    hec_token = os.getenv("CIRCSENSE_HEC_TOKEN", "")
    enabled = os.getenv("CIRCSENSE_HEC_ENABLED", "true").lower() in ("true", "1", "yes")
    if not hec_url or not hec_token:
        enabled = False
    return {
        "hec_url": hec_url,
        "hec_token": hec_token,
        "index": os.getenv("CIRCSENSE_HEC_INDEX", "main"),
        "sourcetype_prefix": os.getenv("CIRCSENSE_SOURCETYPE_PREFIX", "circsense"),
        "batch_size": batch_size,
        "flush_interval": flush_interval,
        "enabled": enabled,
        # Local JSON-lines sink; also receives events HEC could not take.
        "event_log": os.getenv("CIRCSENSE_EVENT_LOG", ""),
    }
