"""Federated Sinkhorn drivers and their configuration."""
from ..stop import StopPolicy, Verdict, evaluate_stop
from .drivers import (ServerView, run, run_async_all_to_all, run_local_iterations, run_sync_all_to_all,
                      run_sync_star)
from .params import DEFAULT_ALPHA, FedParams, RunReport, Topology

__all__ = [
    "DEFAULT_ALPHA", "FedParams", "RunReport", "ServerView", "StopPolicy", "Topology", "Verdict",
    "evaluate_stop", "run", "run_async_all_to_all", "run_local_iterations", "run_sync_all_to_all",
    "run_sync_star",
]
