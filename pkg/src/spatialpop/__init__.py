"""Simulator and protocol library for spatial population protocols.

Agents interact in random pairs and observe a geometric datum about their
partner (a distance, or a displacement vector) while their true positions
stay hidden; the protocols here let them agree on coordinates.
"""

from .engine import (FixedPairs, GroundTruth, PairStream, Protocol, QueryModel, StopRule,
                     TrialAborted, TrialResult, evaluate_query, run_trial, schedule_pair,
                     trial_rngs, verify_silence)
from .epidemics import KContactEpidemic
from .leader_loc import Improved1D, LeaderLocalisation
from .selfstab import SelfStabilising, SelfStabParams
from .vector_loc import VectorLocalisation

__all__ = [
    "FixedPairs", "GroundTruth", "Improved1D", "KContactEpidemic", "LeaderLocalisation",
    "PairStream", "Protocol", "QueryModel", "SelfStabParams", "SelfStabilising", "StopRule",
    "TrialAborted", "TrialResult", "VectorLocalisation", "evaluate_query", "run_trial",
    "schedule_pair", "trial_rngs", "verify_silence",
]
