"""Probes for the gated nudging dynamics.

The central diagnostic tracks the policy-ratio trajectory while the output
units are being nudged: for each sample, log10 r is recorded at every
relaxation step of both nudged phases.  With the reverse gate open
(epsilon_rev >= 1) strongly advantaged samples are dragged far off-policy;
with the gate closed the force cuts out at the interval edge and the
excursion stalls there, up to the single step taken while crossing.
Results are binned by advantage for reporting.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from ..eqprop import LayeredEnergyNet, init_layered_net, relax, three_phase
from ..nudging import ClipConfig, PolicyNudge, gaussian_log_prob, log_nudging_ratio
from ..oracles import bptt_equilibrium_grad, ep_storage_ledger, finite_diff_grad
from .agents import agent_from_bundle
from .checkpoint import load_bundle

LOG10 = np.log(10.0)

BIN_RANGE = (-4.0, 4.0)
N_BINS = 16
DIAG_COLUMNS = ("eps_rev", "bin_lo", "bin_hi", "count", "free_mean", "free_std",
                "min_mean", "min_std", "min_extreme", "max_mean", "max_std",
                "max_extreme")


@dataclass
class RatioProbeResult:
    """Per-sample log10 nudging-ratio statistics for one gate setting."""

    eps_rev: float
    advantage: np.ndarray
    log10_free: np.ndarray    # ratio at the free equilibrium
    log10_min: np.ndarray     # most negative excursion across both phases
    log10_max: np.ndarray     # most positive excursion across both phases


def ratio_probe(net: LayeredEnergyNet, obs: np.ndarray, action: np.ndarray,
                advantage: np.ndarray, log_sigma: np.ndarray,
                log_prob_rollout: np.ndarray, clip_cfg: ClipConfig,
                steps: tuple[int, int, int] = (30, 20, 10),
                eps: float = 1.0) -> RatioProbeResult:
    """Run three phases and track the ratio at every nudged step."""
    n = obs.shape[0]
    log10_min = np.full(n, np.inf)
    log10_max = np.full(n, -np.inf)

    def monitor(_step: int, states: list[np.ndarray]) -> None:
        val = log_nudging_ratio(states[-1], action, log_sigma, log_prob_rollout) / LOG10
        np.minimum(log10_min, val, out=log10_min)
        np.maximum(log10_max, val, out=log10_max)

    nudge = PolicyNudge(action, advantage, log_sigma, log_prob_rollout, clip_cfg)
    res = three_phase(net, obs, nudge, *steps, eps=eps,
                      monitor_pos=monitor, monitor_neg=monitor)
    log10_free = log_nudging_ratio(res.free.out, action, log_sigma,
                                   log_prob_rollout) / LOG10
    return RatioProbeResult(clip_cfg.epsilon_rev, np.asarray(advantage, dtype=np.float64),
                            log10_free, log10_min, log10_max)


def stressed_batch(net: LayeredEnergyNet, n_samples: int, rng: np.random.Generator,
                   log_sigma: np.ndarray, adv_scale: float = 4.0,
                   steps_free: int = 30, eps: float = 1.0,
                   obs_scale: float = 1.0):
    """On-policy samples with amplified advantages for gate stress tests.

    Actions are drawn from the current policy at the free equilibrium, so
    every ratio starts at exactly 1; the advantage magnitudes then set how
    hard the nudge drags the output off that start.  A fixed fraction of
    advantages is exactly zero to exercise the no-force case.
    """
    obs = obs_scale * rng.normal(size=(n_samples, net.sizes[0]))
    free = relax(net, obs, force=None, max_steps=steps_free, eps=eps)
    sigma = np.exp(log_sigma)
    action = free.out + sigma * rng.normal(size=free.out.shape)
    log_prob = gaussian_log_prob(free.out, log_sigma, action)
    advantage = adv_scale * rng.normal(size=n_samples)
    advantage[rng.random(n_samples) < 0.1] = 0.0
    return obs, action, advantage, log_prob


def binned_rows(result: RatioProbeResult, n_bins: int = N_BINS,
                bin_range: tuple[float, float] = BIN_RANGE) -> list[dict]:
    """Aggregate a probe result into advantage-binned CSV rows."""
    edges = np.linspace(bin_range[0], bin_range[1], n_bins + 1)
    idx = np.clip(np.digitize(result.advantage, edges) - 1, 0, n_bins - 1)
    rows = []
    for b in range(n_bins):
        sel = idx == b
        count = int(sel.sum())
        row = {"eps_rev": result.eps_rev, "bin_lo": edges[b], "bin_hi": edges[b + 1],
               "count": count}
        for name, vals in (("free", result.log10_free[sel]),
                           ("min", result.log10_min[sel]),
                           ("max", result.log10_max[sel])):
            row[f"{name}_mean"] = float(vals.mean()) if count else 0.0
            row[f"{name}_std"] = float(vals.std()) if count else 0.0
        row["min_extreme"] = float(result.log10_min[sel].min()) if count else 0.0
        row["max_extreme"] = float(result.log10_max[sel].max()) if count else 0.0
        rows.append(row)
    return rows


def write_diagnostics(rows: list[dict], path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DIAG_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


class QuadraticNudge:
    """Regression nudge for gradient checks: L = 1/2 ||xi_out - y||^2."""

    def __init__(self, y: np.ndarray, beta: float):
        self.y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        self.beta = beta

    def prepare(self, free_out: np.ndarray) -> None:
        pass

    def force(self, out: np.ndarray, sign: float) -> np.ndarray:
        return sign * self.beta * (out - self.y)


def grad_check(n_nets: int = 20, max_sizes=(8, 16, 16, 4), beta: float = 0.1,
               seed: int = 0, batch: int = 2, steps: int = 3000,
               fd_step: float = 1e-4, bias_shift: float = 0.5,
               with_bptt: bool = False) -> list[dict]:
    """Compare contrastive gradients against finite differences of the
    relaxed-equilibrium quadratic loss for a family of random nets.

    Hidden biases are centered at ``bias_shift`` so most units equilibrate
    inside the linear region of the hard sigmoid.  The contrastive estimate
    carries an O(beta^2) error only where the equilibrium is smooth; a unit
    pinned at a saturation kink makes the loss piecewise smooth there, and a
    finite nudge straddling the kink measures a different one-sided slope
    than the infinitesimal finite-difference probe.  Zero-bias random nets
    pin roughly half their units, so they test the kink mismatch rather
    than the estimator.

    With ``with_bptt`` each row additionally carries the cosine against a
    400-step unrolled-relaxation backward pass on the same net and the
    activation-storage ratio of a 30-step unroll over the contrastive
    scheme (which keeps two equilibria regardless of step count).
    """
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_nets):
        sizes = [max(2, int(rng.integers(2, m + 1))) for m in max_sizes]
        net = init_layered_net(sizes, rng, dtype=np.float64, seed=1000 * seed + i)
        for b in net.biases[:-1]:
            b += bias_shift
        x = rng.normal(size=(batch, sizes[0]))
        y = rng.normal(size=(batch, sizes[-1]))

        tp = three_phase(net, x, QuadraticNudge(y, beta), steps, steps, steps,
                         conv_tol=1e-12, early_exit=True)
        ep = np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                             for w, b in zip(tp.d_weights, tp.d_biases)])

        probe = net.copy()

        def loss(theta):
            probe.set_flat(theta)
            res = relax(probe, x, force=None, max_steps=steps, conv_tol=1e-13,
                        early_exit=True)
            return 0.5 * float(((res.out - y) ** 2).sum()) / batch

        fd = finite_diff_grad(loss, net.get_flat(), h=fd_step)
        cos = float(ep @ fd / (np.linalg.norm(ep) * np.linalg.norm(fd)))
        rel = float(np.linalg.norm(ep - fd) / np.linalg.norm(fd))
        row = {"net": i, "sizes": "x".join(map(str, sizes)),
               "cosine": cos, "rel_l2": rel}

        if with_bptt:
            def batch_mean_loss(out):
                err = out - y
                return 0.5 * float((err ** 2).sum()) / batch, err / batch

            d_w, d_b, _ = bptt_equilibrium_grad(net, x, batch_mean_loss, steps=400)
            bptt = np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                                   for w, b in zip(d_w, d_b)])
            row["cosine_bptt"] = float(
                ep @ bptt / (np.linalg.norm(ep) * np.linalg.norm(bptt)))
            _, _, ledger = bptt_equilibrium_grad(net, x, batch_mean_loss, steps=30)
            row["storage_ratio"] = (ledger.peak_stored_scalars
                                    / ep_storage_ledger(net, batch).peak_stored_scalars)
        rows.append(row)
    return rows


def diagnose_command(checkpoint: str | None, out_path: str,
                     eps_revs=(0.7, 1.0), samples: int = 2048, seed: int = 0,
                     beta: float = 0.1, adv_scale: float = 4.0,
                     sizes=(16, 32, 32, 4)) -> list[dict]:
    """CLI entry point: probe a stored or freshly initialized policy."""
    rng = np.random.default_rng(seed)
    if checkpoint is not None:
        agent, config = agent_from_bundle(load_bundle(checkpoint))
        net, log_sigma = agent.policy_net, agent.log_sigma
        epsilon, steps = config.epsilon, config.policy_steps
        eps_relax = config.eps_ep
    else:
        net = init_layered_net(list(sizes), rng, seed=seed)
        log_sigma = np.zeros(net.sizes[-1])
        epsilon, steps, eps_relax = 0.2, (30, 20, 10), 1.0
    obs, action, advantage, log_prob = stressed_batch(
        net, samples, rng, log_sigma, adv_scale=adv_scale, steps_free=steps[0],
        eps=eps_relax)
    rows = []
    for eps_rev in eps_revs:
        cfg = ClipConfig(epsilon=epsilon, epsilon_rev=eps_rev, beta_ep=beta)
        probe = ratio_probe(net, obs, action, advantage, log_sigma, log_prob,
                            cfg, steps=steps, eps=eps_relax)
        rows.extend(binned_rows(probe))
    write_diagnostics(rows, out_path)
    return rows
