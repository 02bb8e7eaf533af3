"""Per-VM observation vectors for the migration policy."""

import numpy as np

from ..policies import DetectionConfig, lr_predict_hosts
from .network import N_FEATURES

FEATURE_NAMES = (
    "vm_usage/d_vm",
    "vm_usage/host_capacity",
    "ram_usage/ram_demand",
    "host_utilization",
    "host_predicted_next",
    "host_overload_rate",
    "vms_on_host/total_vms",
)


def encode_state(state, cfg=DetectionConfig()):
    """Return an ``(n_vms, 7)`` array, one row per VM in request order.

    Usage figures are those of the slot being decided, on the placement
    in force before migration.
    """
    req = state.request
    n = len(req)
    if n == 0:
        return np.zeros((0, N_FEATURES))
    o = state.observed_slot
    cpu = req.cpu[:, o]
    host_of = state.placement.host_of
    cap = state.capacity
    loads = np.bincount(host_of, weights=cpu, minlength=state.n_hosts)
    counts = np.bincount(host_of, minlength=state.n_hosts)
    util = loads / cap
    pred, _ = lr_predict_hosts(state.utilization_history(), cfg)
    if state.slot > 0:
        rate = state.overload_history[:state.slot].mean(axis=0)
    else:
        rate = np.zeros(state.n_hosts)
    feats = np.empty((n, N_FEATURES))
    feats[:, 0] = cpu / req.d_vm
    feats[:, 1] = cpu / cap[host_of]
    feats[:, 2] = req.ram[:, o] / req.ram_demand
    feats[:, 3] = util[host_of]
    feats[:, 4] = pred[host_of]
    feats[:, 5] = rate[host_of]
    feats[:, 6] = counts[host_of] / n
    return feats


def pool(features):
    """Cluster summary for the value network: column means then maxima."""
    if len(features) == 0:
        return np.zeros(2 * N_FEATURES)
    return np.concatenate([features.mean(axis=0), features.max(axis=0)])
