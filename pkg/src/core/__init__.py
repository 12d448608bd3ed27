"""
Core stream algorithms: whitening, separation, identification, metrics.
Основные потоковые алгоритмы: выбеливание, разделение, идентификация, метрики.
"""

from .schedule import ForgettingSchedule
from .separate import (
    NonlinearityConfig,
    SeparatorState,
    corss_block_update,
    orica_update,
    separator_init,
)
from .signals import Envelope, MultichannelBlock, SpikeTrain, TriggerTrain, iter_blocks
from .whiten import WhitenerState, whiten_block, whitener_init

__all__ = [
    "Envelope",
    "ForgettingSchedule",
    "MultichannelBlock",
    "NonlinearityConfig",
    "SeparatorState",
    "SpikeTrain",
    "TriggerTrain",
    "WhitenerState",
    "corss_block_update",
    "iter_blocks",
    "orica_update",
    "separator_init",
    "whiten_block",
    "whitener_init",
]
