"""Self-verification suites.

Three independent oracles guard the numerics:

* exhaustive path enumeration replicates forward-backward on small inputs;
* analytic invariants (occupancy normalization, pairwise-to-frame
  marginalization, boundary one-hots) must hold on every instance;
* high-order central finite differences replicate every gradient.

Each suite returns a report with the worst observed deviations so callers
can assert against their own tolerances.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import Utterance
from .encoder import EncoderConfig, init_encoder
from .lattice import (
    LatticeStats,
    Scales,
    TransitionField,
    brute_force,
    forward_backward,
    iter_monotone_paths,
    loss_and_grads,
)
from .alignment import viterbi_align
from .topology import LabelInventory, expand_labels
from .trainer import Model, utterance_forward, utterance_grads
from .transitions import (
    KIND_FULL,
    KIND_FULL_INPUT,
    KIND_SPEECH_SILENCE,
    KIND_SUBSTATE_SILENCE,
    TransitionParamization,
    accumulate_grad,
    evaluate,
    init_params,
)

# Relative errors use max(|a|, |b|, REL_FLOOR) as denominator, so tiny
# gradients are judged on an absolute scale where finite differences of a
# float64 loss bottom out.
REL_FLOOR = 1e-4

TOL_LL = 1e-10
TOL_OCCUPANCY = 1e-9
TOL_INVARIANT = 1e-8
TOL_GRAD = 1e-5
TOL_GRAD_ENCODER = 1e-4
TOL_VITERBI_SCORE = 1e-9


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), REL_FLOOR)


def central_diff(f, x: float, h: float = 1e-3) -> float:
    """Five-point central difference, truncation error O(h^4)."""
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)


def _random_instance(rng: np.random.Generator, max_frames: int, max_states: int):
    T = int(rng.integers(1, max_frames + 1))
    S = int(rng.integers(1, min(T, max_states) + 1))
    log_phi = rng.standard_normal((T, S))
    if rng.random() < 0.25:
        # arbitrary field, not a probability pair
        tm_field = TransitionField(
            log_forward=rng.standard_normal((T, S)),
            log_loop=rng.standard_normal((T, S)),
        )
    else:
        p = rng.uniform(0.05, 0.95, size=(T, S))
        tm_field = TransitionField(log_forward=np.log(p), log_loop=np.log1p(-p))
    scales = Scales(
        lpm_scale=float(rng.uniform(0.0, 1.5)), tm_scale=float(rng.uniform(0.0, 1.5))
    )
    return log_phi, tm_field, scales


def _invariant_errors(stats: LatticeStats) -> tuple[float, float, float]:
    gamma, xi_loop, xi_fwd = stats.gamma, stats.xi_loop, stats.xi_fwd
    T, S = gamma.shape
    row_sum = float(np.abs(gamma.sum(axis=1) - 1.0).max())
    boundary = max(
        float(abs(gamma[0, 0] - 1.0)),
        float(abs(gamma[T - 1, S - 1] - 1.0)),
        float(np.abs(gamma[0, 1:]).max()) if S > 1 else 0.0,
        float(np.abs(gamma[T - 1, : S - 1]).max()) if S > 1 else 0.0,
    )
    marginal = 0.0
    if T > 1:
        outgoing = xi_loop + xi_fwd                     # must equal gamma[t]
        incoming = xi_loop.copy()                       # must equal gamma[t+1]
        incoming[:, 1:] += xi_fwd[:, :-1]
        marginal = max(
            float(np.abs(outgoing - gamma[:-1]).max()),
            float(np.abs(incoming - gamma[1:]).max()),
        )
    return row_sum, boundary, marginal


@dataclass
class OracleReport:
    instances: int
    max_ll_err: float
    max_gamma_err: float
    max_xi_err: float
    max_row_sum_err: float
    max_boundary_err: float
    max_marginal_err: float
    seconds: float

    @property
    def ok(self) -> bool:
        return (
            self.max_ll_err <= TOL_LL
            and max(self.max_gamma_err, self.max_xi_err) <= TOL_OCCUPANCY
            and max(self.max_row_sum_err, self.max_boundary_err, self.max_marginal_err)
            <= TOL_INVARIANT
        )

    def lines(self) -> list[str]:
        return [
            f"oracle instances        {self.instances}",
            f"max |d log_likelihood|  {self.max_ll_err:.3e}",
            f"max |d gamma|           {self.max_gamma_err:.3e}",
            f"max |d xi|              {self.max_xi_err:.3e}",
            f"max row-sum deviation   {self.max_row_sum_err:.3e}",
            f"max boundary deviation  {self.max_boundary_err:.3e}",
            f"max marginalization     {self.max_marginal_err:.3e}",
            f"elapsed                 {self.seconds:.2f} s",
        ]


def run_oracle_check(
    instances: int = 1000, seed: int = 0, max_frames: int = 8, max_states: int = 5
) -> OracleReport:
    """forward_backward against exhaustive path enumeration."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    ll = g = x = rs = bd = mg = 0.0
    for _ in range(instances):
        log_phi, tm_field, scales = _random_instance(rng, max_frames, max_states)
        fast = forward_backward(log_phi, tm_field, scales)
        slow = brute_force(log_phi, tm_field, scales)
        ll = max(ll, abs(fast.log_likelihood - slow.log_likelihood))
        g = max(g, float(np.abs(fast.gamma - slow.gamma).max()))
        if fast.xi_loop.size:
            x = max(
                x,
                float(np.abs(fast.xi_loop - slow.xi_loop).max()),
                float(np.abs(fast.xi_fwd - slow.xi_fwd).max()),
            )
        errs = _invariant_errors(fast)
        rs, bd, mg = max(rs, errs[0]), max(bd, errs[1]), max(mg, errs[2])
    return OracleReport(
        instances=instances,
        max_ll_err=ll,
        max_gamma_err=g,
        max_xi_err=x,
        max_row_sum_err=rs,
        max_boundary_err=bd,
        max_marginal_err=mg,
        seconds=time.perf_counter() - t0,
    )


@dataclass
class GradientReport:
    lattice_entries: int
    max_lattice_err: float
    tm_entries: int
    max_tm_err: float
    encoder_entries: int
    max_encoder_err: float
    seconds: float

    @property
    def ok(self) -> bool:
        return (
            max(self.max_lattice_err, self.max_tm_err) <= TOL_GRAD
            and self.max_encoder_err <= TOL_GRAD_ENCODER
        )

    def lines(self) -> list[str]:
        return [
            f"emission-gradient entries   {self.lattice_entries}, max rel err {self.max_lattice_err:.3e}",
            f"transition-gradient entries {self.tm_entries}, max rel err {self.max_tm_err:.3e}",
            f"encoder-gradient entries    {self.encoder_entries}, max rel err {self.max_encoder_err:.3e}",
            f"elapsed                     {self.seconds:.2f} s",
        ]


def _check_lattice_grads(rng: np.random.Generator, instances: int) -> tuple[int, float]:
    worst = 0.0
    entries = 0
    for _ in range(instances):
        log_phi, tm_field, scales = _random_instance(rng, max_frames=6, max_states=4)
        _, d_log_phi, _ = loss_and_grads(log_phi, tm_field, scales)
        T, S = log_phi.shape
        for t in range(T):
            for s in range(S):
                def f(v, t=t, s=s):
                    p = log_phi.copy()
                    p[t, s] = v
                    loss, _, _ = loss_and_grads(p, tm_field, scales)
                    return loss

                fd = central_diff(f, log_phi[t, s])
                worst = max(worst, rel_err(fd, d_log_phi[t, s]))
                entries += 1
    return entries, worst


def _tm_cases(rng: np.random.Generator):
    inventory = LabelInventory(n_labels=3, silence_id=0)
    chain = expand_labels([1, 2], inventory)
    S = len(chain)
    T = S + 4
    log_phi = rng.standard_normal((T, S))
    scales = Scales(lpm_scale=0.3, tm_scale=0.7)
    for kind in (KIND_SPEECH_SILENCE, KIND_SUBSTATE_SILENCE, KIND_FULL, KIND_FULL_INPUT):
        head_dim = 4 if kind == KIND_FULL_INPUT else None
        paramization = TransitionParamization(kind=kind, head_input_dim=head_dim)
        params = init_params(paramization, inventory, "random", seed=int(rng.integers(1 << 31)))
        encoder_out = None
        if kind == KIND_FULL_INPUT:
            encoder_out = rng.standard_normal((T, head_dim))
            params.weights[:] = rng.standard_normal(params.weights.shape) * 0.3
        yield chain, log_phi, scales, params, encoder_out


def _check_tm_grads(rng: np.random.Generator) -> tuple[int, float]:
    worst = 0.0
    entries = 0
    for chain, log_phi, scales, params, encoder_out in _tm_cases(rng):
        def loss_of(p):
            tm_field = evaluate(p, chain, log_phi.shape[0], encoder_out=encoder_out)
            loss, _, _ = loss_and_grads(log_phi, tm_field, scales)
            return loss

        _, _, stats = loss_and_grads(
            log_phi, evaluate(params, chain, log_phi.shape[0], encoder_out=encoder_out), scales
        )
        grads = accumulate_grad(
            params, chain, stats.xi_loop, stats.xi_fwd, scales.tm_scale, encoder_out=encoder_out
        )
        for i in range(params.logits.size):
            def f(v, i=i):
                p = params.copy()
                p.logits[i] = v
                return loss_of(p)

            fd = central_diff(f, params.logits[i])
            worst = max(worst, rel_err(fd, grads.d_logits[i]))
            entries += 1
        if params.weights is not None:
            for r in range(params.weights.shape[0]):
                for c in range(params.weights.shape[1]):
                    def f(v, r=r, c=c):
                        p = params.copy()
                        p.weights[r, c] = v
                        return loss_of(p)

                    fd = central_diff(f, params.weights[r, c])
                    worst = max(worst, rel_err(fd, grads.d_weights[r, c]))
                    entries += 1
    return entries, worst


def _tiny_model(kind: str, seed: int) -> tuple[Model, Utterance]:
    inventory = LabelInventory(n_labels=2, silence_id=0)
    chain = expand_labels([1], inventory)
    T = len(chain) + 3
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((T, 2))
    enc_cfg = EncoderConfig(
        input_dim=2,
        output_dim=inventory.n_outputs,
        hidden_layers=(5,),
        activation="tanh",
        context_window=1,
        dropout_rate=0.0,
    )
    paramization = TransitionParamization(
        kind=kind, head_input_dim=enc_cfg.hidden_dim if kind == KIND_FULL_INPUT else None
    )
    params = init_params(paramization, inventory, "random", seed=seed + 1)
    if params.weights is not None:
        params.weights[:] = rng.standard_normal(params.weights.shape) * 0.3
    model = Model(
        inventory=inventory,
        encoder_config=enc_cfg,
        encoder=init_encoder(enc_cfg, seed=seed + 2),
        transitions=params,
    )
    utt = Utterance(utt_id="t0", features=features, labels=[1], chain=chain)
    return model, utt


def _check_encoder_grads(rng: np.random.Generator) -> tuple[int, float]:
    worst = 0.0
    entries = 0
    scales = Scales(lpm_scale=0.3, tm_scale=0.3)
    for kind in (KIND_SPEECH_SILENCE, KIND_FULL_INPUT):
        model, utt = _tiny_model(kind, seed=int(rng.integers(1 << 31)))
        res = utterance_grads(model, utt, scales, train_mode=False, dropout_seed=0)

        def loss_now() -> float:
            loss, _, _, _, _ = utterance_forward(model, utt, scales)
            return loss

        for layer, (W, b) in enumerate(model.encoder.layers):
            gW, gb = res.enc_grads.layers[layer]
            for arr, grad in ((W, gW), (b, gb)):
                flat = arr.reshape(-1)
                gflat = grad.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]

                    def f(v, flat=flat, i=i, orig=orig):
                        flat[i] = v
                        out = loss_now()
                        flat[i] = orig
                        return out

                    fd = central_diff(f, orig)
                    worst = max(worst, rel_err(fd, gflat[i]))
                    entries += 1
    return entries, worst


def run_gradient_check(seed: int = 0, lattice_instances: int = 8) -> GradientReport:
    """Finite differences against every analytic gradient path."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    n_lat, e_lat = _check_lattice_grads(rng, lattice_instances)
    n_tm, e_tm = _check_tm_grads(rng)
    n_enc, e_enc = _check_encoder_grads(rng)
    return GradientReport(
        lattice_entries=n_lat,
        max_lattice_err=e_lat,
        tm_entries=n_tm,
        max_tm_err=e_tm,
        encoder_entries=n_enc,
        max_encoder_err=e_enc,
        seconds=time.perf_counter() - t0,
    )


@dataclass
class ViterbiReport:
    instances: int
    path_mismatches: int
    max_score_err: float
    slack_violations: int  # cases with best-path score > full-sum total
    seconds: float

    @property
    def ok(self) -> bool:
        return (
            self.path_mismatches == 0
            and self.max_score_err <= TOL_VITERBI_SCORE
            and self.slack_violations == 0
        )

    def lines(self) -> list[str]:
        return [
            f"viterbi instances       {self.instances}",
            f"path mismatches         {self.path_mismatches}",
            f"max |d best score|      {self.max_score_err:.3e}",
            f"score > full-sum cases  {self.slack_violations}",
            f"elapsed                 {self.seconds:.2f} s",
        ]


def run_viterbi_check(
    instances: int = 500, seed: int = 0, max_frames: int = 8, max_states: int = 5
) -> ViterbiReport:
    """Viterbi against brute-force best path, plus the max <= logsumexp bound."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    mismatches = 0
    score_err = 0.0
    slack_bad = 0
    inventory = LabelInventory(n_labels=2, silence_id=0, substates_per_speech_label=1)
    for _ in range(instances):
        log_phi, tm_field, scales = _random_instance(rng, max_frames, max_states)
        T, S = log_phi.shape
        # one chain position per lattice state; labels are irrelevant here
        chain = expand_labels([1] * S, inventory, silence_mode="none")
        ali, best = viterbi_align(log_phi, tm_field, scales, chain)
        best_path = None
        best_score = -np.inf
        for path in iter_monotone_paths(T, S):
            score = scales.lpm_scale * log_phi[np.arange(T), path].sum()
            for t in range(1, T):
                if path[t] == path[t - 1]:
                    score += scales.tm_scale * tm_field.log_loop[t, path[t]]
                else:
                    score += scales.tm_scale * tm_field.log_forward[t, path[t] - 1]
            if score > best_score:
                best_score = score
                best_path = path
        if not np.array_equal(ali.state_pos - 1, best_path):
            mismatches += 1
        score_err = max(score_err, abs(best - best_score))
        total = forward_backward(log_phi, tm_field, scales).log_likelihood
        if best > total + 1e-9:
            slack_bad += 1
    return ViterbiReport(
        instances=instances,
        path_mismatches=mismatches,
        max_score_err=score_err,
        slack_violations=slack_bad,
        seconds=time.perf_counter() - t0,
    )
