"""Standing numerical checks: loss oracles, finite-difference meta-gradients, tabular TD convergence.

Each check returns a JSON-serialisable report ``{"name", "passed", "cases"}``.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from ocgvf.agent import AgentConfig, AgentNet, ddqn_loss, gvf_loss
from ocgvf.meta import BatchTensors, Learner


def _report(name: str, cases: list[dict], tol: float, key: str = "error") -> dict:
    passed = all(c[key] <= tol for c in cases)
    return {"name": name, "passed": bool(passed), "tolerance": tol, "cases": cases}


def _t(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


# ----------------------------------------------------------------------------- loss oracles

def _mstde_closed_form(v_s, v_next, c, done, gamma) -> float:
    v_s, v_next, c = (np.asarray(x, dtype=np.float64) for x in (v_s, v_next, c))
    not_done = 1.0 - np.asarray(done, dtype=np.float64)[:, None]
    return float(np.mean((c + gamma * not_done * v_next - v_s) ** 2))


def check_mstde_oracle(tol: float = 1e-6) -> dict:
    cases = []

    def case(name, v_s, v_next, c, done, gamma, expected=None):
        got = float(gvf_loss(_t(v_s), _t(v_next), _t(c), _t(done), gamma))
        want = _mstde_closed_form(v_s, v_next, c, done, gamma) if expected is None else expected
        cases.append({"case": name, "value": got, "expected": want, "error": abs(got - want)})

    # (1 + 0.99 * 2 - 0)^2
    case("single_transition", [[0.0]], [[2.0]], [[1.0]], [0.0], 0.99, expected=8.8804)
    case("all_zero", [[0.0, 0.0]], [[0.0, 0.0]], [[0.0, 0.0]], [0.0], 0.99, expected=0.0)
    case("terminal_no_bootstrap", [[1.0]], [[123.0]], [[1.0]], [1.0], 0.99, expected=0.0)
    rng = np.random.default_rng(0)
    v_s, v_n, c = rng.normal(size=(3, 8, 5))
    case("random_batch", v_s, v_n, c, rng.integers(0, 2, 8), 0.9)
    return _report("mstde_oracle", cases, tol)


def check_ddqn_oracle(tol: float = 1e-6) -> dict:
    cases = []

    def case(name, q_s, a, r, q_on, q_tg, done, gamma, expected):
        got = float(ddqn_loss(_t(q_s), torch.tensor(a), _t(r), _t(q_on), _t(q_tg), _t(done), gamma))
        cases.append({"case": name, "value": got, "expected": expected, "error": abs(got - expected)})

    case("terminal", [[5.0, 0.0]], [0], [5.0], [[9.0, 1.0]], [[7.0, 2.0]], [1.0], 0.99, 0.0)
    # online argmax = action 1, target value 3: y = 0.99 * 3
    case("double_q_target", [[0.0, 0.0]], [0], [0.0], [[1.0, 2.0]], [[10.0, 3.0]], [0.0], 0.99, 8.8209)
    # online and target agree on action 0: plain DQN target 1 + 0.5 * 4
    case("same_argmax", [[1.0, 0.0]], [0], [1.0], [[3.0, 1.0]], [[4.0, 0.0]], [0.0], 0.5, 4.0)
    return _report("ddqn_oracle", cases, tol)


# ----------------------------------------------------------------------------- meta-gradient

class _LinearQuestion(nn.Module):
    """tanh(W x + b) over the raw synthetic features."""

    def __init__(self, in_dim: int, num: int):
        super().__init__()
        self.fc = nn.Linear(in_dim, num)

    def forward(self, x):
        return torch.tanh(self.fc(x))


class _TinySource:
    meta_learned = True

    def __init__(self, question: nn.Module, num: int):
        self.question = question
        self.num = num

    def inputs(self, obs, bt=None):
        return obs

    def evaluate(self, inputs, params=None):
        if params is None:
            return self.question(inputs)
        return functional_call(self.question, params, (inputs,))


def _tiny_problem(dims: int, seed: int, inner_steps: int, batch: int = 4, num_actions: int = 2):
    g = torch.Generator().manual_seed(seed)

    def batch_tensors(n):
        return BatchTensors(
            s=torch.randn(n, dims, generator=g, dtype=torch.float64),
            a=torch.randint(0, num_actions, (n,), generator=g),
            r=torch.randn(n, generator=g, dtype=torch.float64),
            s_next=torch.randn(n, dims, generator=g, dtype=torch.float64),
            done=(torch.rand(n, generator=g) < 0.25).to(torch.float64),
        )

    batches = [batch_tensors(batch) for _ in range(inner_steps)]
    segment = batch_tensors(batch + 1)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = AgentNet(AgentConfig(
            num_actions=num_actions, num_gvfs=1, gvf_kind="state", use_gvfs=True, use_features=True,
            use_layernorm=True, projection_dim=2, gvf_hidden=3, hidden_arch=(4,), input_dim=dims,
        )).to(torch.float64)
        question = _LinearQuestion(dims, 1).to(torch.float64)
    return net, question, batches, segment


def _objective_fd(net: AgentNet, eta: dict, question: nn.Module, batches, segment, alpha: float, gamma: float,
                  theta0: dict, target: dict, free: Optional[set], pinned: Optional[list]) -> float:
    """Sum of post-update control losses as a plain function of the question parameters.

    Parameters in ``free`` follow SGD from ``theta0``; all others take the values in
    ``pinned[j]`` before inner step j (and ``pinned[-1]`` after the last one).
    """
    names = list(theta0)

    def forward(params, x):
        return functional_call(net, params, (x,))

    def control(params, bt):
        q = forward(params, bt.s).q
        with torch.no_grad():
            q_next = forward(params, bt.s_next).q
            q_tgt = forward(target, bt.s_next).q
            best = q_next.argmax(dim=1, keepdim=True)
            y = bt.r + gamma * (1.0 - bt.done) * q_tgt.gather(1, best).squeeze(1)
        return ((y - q.gather(1, bt.a[:, None]).squeeze(1)) ** 2).mean()

    theta = {n: theta0[n].clone() for n in names}
    total = 0.0
    for j, bt in enumerate(batches):
        if pinned is not None:
            theta = {n: theta[n] if n in free else pinned[j][n].clone() for n in names}
        leaves = {n: t.detach().requires_grad_(True) for n, t in theta.items()}
        with torch.no_grad():
            c = functional_call(question, eta, (bt.s,))
        out_s = forward(leaves, bt.s)
        with torch.no_grad():
            v_next = forward(leaves, bt.s_next).gvf.squeeze(-1)
        v_s = out_s.gvf.squeeze(-1)
        td = c + gamma * (1.0 - bt.done)[:, None] * v_next - v_s
        loss = (td ** 2).mean() + control(leaves, bt)
        grads = torch.autograd.grad(loss, [leaves[n] for n in names])
        theta = {n: (leaves[n] - alpha * g).detach() for n, g in zip(names, grads)}
        if pinned is not None:
            after = pinned[j + 1]
            theta = {n: theta[n] if n in free else after[n].clone() for n in names}
        with torch.no_grad():
            total += float(control(theta, segment))
    return total


def _recorded_trajectory(net, question, batches, alpha, gamma, theta0, target) -> list[dict]:
    """Full-parameter trajectory (before each step and after the last) at the unperturbed question parameters."""
    eta = {n: p.detach() for n, p in question.named_parameters()}
    traj = [theta0]
    theta = theta0
    for bt in batches:
        leaves = {n: t.detach().requires_grad_(True) for n, t in theta.items()}
        with torch.no_grad():
            c = functional_call(question, eta, (bt.s,))
        out_s = functional_call(net, leaves, (bt.s,))
        with torch.no_grad():
            out_n = functional_call(net, leaves, (bt.s_next,))
            q_tgt = functional_call(net, target, (bt.s_next,)).q
            best = out_n.q.argmax(dim=1, keepdim=True)
            y = bt.r + gamma * (1.0 - bt.done) * q_tgt.gather(1, best).squeeze(1)
        td = c + gamma * (1.0 - bt.done)[:, None] * out_n.gvf.squeeze(-1) - out_s.gvf.squeeze(-1)
        loss = (td ** 2).mean() + ((y - out_s.q.gather(1, bt.a[:, None]).squeeze(1)) ** 2).mean()
        grads = torch.autograd.grad(loss, list(leaves.values()))
        theta = {n: (leaves[n] - alpha * g).detach() for n, g in zip(leaves, grads)}
        traj.append(theta)
    return traj


def meta_gradient_case(dims: int = 2, seed: int = 0, inner_steps: int = 1, alpha: float = 0.1,
                       track: str = "all", eps: float = 1e-5, gamma: float = 0.9) -> dict:
    net, question, batches, segment = _tiny_problem(dims, seed, inner_steps)
    theta0 = {n: p.detach().clone() for n, p in net.named_parameters()}
    target = {n: t.clone() for n, t in theta0.items()}
    learner = Learner(net, _TinySource(question, 1), gamma=gamma, lr=alpha, target_period=10 ** 9,
                      unroll_steps=inner_steps, inner_optimizer="sgd", track=track, dtype=torch.float64)
    for bt in batches:
        learner.inner_update(bt)
    grads = learner.meta_gradient(segment)

    free = set(learner.tracked)
    pinned = None
    if track != "all":
        pinned = _recorded_trajectory(net, question, batches, alpha, gamma, theta0, target)
    base = {n: p.detach().clone() for n, p in question.named_parameters()}
    worst = 0.0
    coords = []
    for name, value in base.items():
        flat = value.flatten()
        for i in range(flat.numel()):
            vals = []
            for sign in (1.0, -1.0):
                pert = {n: v.clone() for n, v in base.items()}
                pert[name].view(-1)[i] += sign * eps
                vals.append(_objective_fd(net, pert, question, batches, segment, alpha, gamma,
                                          theta0, target, free, pinned))
            fd = (vals[0] - vals[1]) / (2 * eps)
            g = float(grads[name].flatten()[i])
            rel = abs(g - fd) / max(abs(g), abs(fd), 1e-8)
            worst = max(worst, rel)
            coords.append({"param": f"{name}[{i}]", "meta_grad": g, "finite_diff": fd, "rel_error": rel})
    return {"inner_steps": inner_steps, "track": track, "alpha": alpha, "error": worst, "coords": coords,
            "max_abs_grad": max(abs(c["meta_grad"]) for c in coords)}


def check_meta_gradient(dims: int = 2, seed: int = 0, tol: float = 1e-3) -> dict:
    cases = []
    for steps in (1, 3):
        for track in ("all", "heads"):
            cases.append(meta_gradient_case(dims, seed, steps, track=track))
    # no inner movement -> no path from the question parameters to the control loss
    zero = meta_gradient_case(dims, seed, 1, alpha=0.0)
    zero["error"] = zero["max_abs_grad"]
    zero["expect_exact_zero"] = True
    cases.append(zero)
    report = _report("meta_gradient", cases, tol)
    report["passed"] = report["passed"] and zero["max_abs_grad"] == 0.0
    return report


# ----------------------------------------------------------------------------- tabular TD

def chain_problem(num_states: int = 5, gamma: float = 0.9, rewarded: Optional[int] = None):
    """Deterministic left-to-right chain; the last state exits to an absorbing terminal."""
    p = np.zeros((num_states, num_states))
    for s in range(num_states - 1):
        p[s, s + 1] = 1.0
    c = np.zeros(num_states)
    if rewarded is not None:
        c[rewarded] = 1.0
    exact = np.linalg.solve(np.eye(num_states) - gamma * p, c)
    return p, c, exact


def tabular_td(c: np.ndarray, gamma: float, lr: float = 1.0, iters: int = 5000) -> np.ndarray:
    n = len(c)
    table = torch.zeros(n, dtype=torch.float64, requires_grad=True)
    s = torch.arange(n)
    s_next = torch.clamp(s + 1, max=n - 1)
    done = (s == n - 1).to(torch.float64)
    cum = torch.as_tensor(c, dtype=torch.float64)[:, None]
    opt = torch.optim.SGD([table], lr=lr)
    for _ in range(iters):
        opt.zero_grad()
        loss = gvf_loss(table[s][:, None], table[s_next][:, None], cum, done, gamma)
        loss.backward()
        opt.step()
    return table.detach().numpy()


def check_tabular_convergence(tol: float = 1e-3) -> dict:
    cases = []
    for name, gamma, rewarded in (("chain_gamma_0.9", 0.9, 4), ("zero_cumulant", 0.9, None), ("gamma_0", 0.0, 4)):
        _, c, exact = chain_problem(5, gamma, rewarded)
        learned = tabular_td(c, gamma)
        cases.append({"case": name, "learned": learned.tolist(), "exact": exact.tolist(),
                      "error": float(np.max(np.abs(learned - exact)))})
    return _report("tabular_convergence", cases, tol)


def run_all_checks() -> dict:
    start = time.time()
    reports = [check_mstde_oracle(), check_ddqn_oracle(), check_meta_gradient(), check_tabular_convergence()]
    return {"passed": all(r["passed"] for r in reports), "seconds": round(time.time() - start, 2),
            "checks": reports}
