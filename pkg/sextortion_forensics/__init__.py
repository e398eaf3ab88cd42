__version__ = "0.1.0"
__url__ = "https://github.com/sextortion-forensics/sextortion_forensics"

from sextortion_forensics.chainstore import ChainStore, MemoryLedger, PriceSeries
from sextortion_forensics.clustering import expand_seeds, multi_input_cluster
from sextortion_forensics.config import PipelineConfig
from sextortion_forensics.corpus import bucket_emails, extract_datapoints
from sextortion_forensics.database import Database
from sextortion_forensics.filters import collect_payments, revenue_report

__all__ = [
    "ChainStore",
    "Database",
    "MemoryLedger",
    "PipelineConfig",
    "PriceSeries",
    "bucket_emails",
    "collect_payments",
    "expand_seeds",
    "extract_datapoints",
    "multi_input_cluster",
    "revenue_report",
]
