"""Simulation and verification tools for the evolving Kingman coalescent."""

from .kingman import CoalescentTree, InterCoalescenceTimes, SubsampleChain
from .moran import LengthPath, MoranState
from .lookdown import LookdownWindow
from .stats import StatReport

__all__ = [
    "CoalescentTree",
    "InterCoalescenceTimes",
    "LengthPath",
    "LookdownWindow",
    "MoranState",
    "StatReport",
    "SubsampleChain",
]
