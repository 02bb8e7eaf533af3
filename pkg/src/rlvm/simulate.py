"""Episode runner and the method registry."""

from .cluster import ClusterConfig, new_state, advance_slot
from .errors import ConfigError
from .metrics import summarize
from .policies import COMBOS, DetectionConfig, Placer, lr_mmt_select

METHODS = ("lr-mmt-random", "lr-mmt-ff", "lr-mmt-pabfd", "rl-pabfd")


def make_method(name, detection=DetectionConfig(), seed=0, params=None):
    """Return ``(selector, placer)`` for a method name."""
    name = name.lower()
    if name in COMBOS:
        return (lambda state: lr_mmt_select(state, detection)), Placer(COMBOS[name], seed)
    if name == "rl-pabfd":
        if params is None:
            raise ConfigError("rl-pabfd needs trained policy parameters")
        from .agent import rl_step
        return (lambda state: rl_step(params, state, detection)), Placer("pabfd", seed)
    raise ConfigError(f"unknown method {name!r}; expected one of {METHODS}")


def run_episode(request, cluster_cfg=None, selector=None, placer=None):
    """Simulate every slot of ``request``; returns ``(accounting, final_state)``."""
    state = new_state(request, cluster_cfg or ClusterConfig())
    accounting = []
    while not state.done:
        mig = selector(state)
        state, acct = advance_slot(state, mig, placer)
        accounting.append(acct)
    return accounting, state


def evaluate(request, method, cluster_cfg=None, detection=DetectionConfig(), seed=0, params=None):
    """Run one method on one request and return ``(metrics, accounting)``."""
    selector, placer = make_method(method, detection, seed, params)
    accounting, state = run_episode(request, cluster_cfg, selector, placer)
    return summarize(accounting, request, state.n_hosts), accounting
