import pytest
import torch
from torch import nn
from torch.func import functional_call

from ocgvf.agent import AgentConfig, AgentNet
from ocgvf.errors import TrainingAborted
from ocgvf.meta import BatchTensors, Learner, epsilon_at, optimizer_step, zero_opt_state

DIMS = 6


class Source:
    meta_learned = True

    def __init__(self, num=2, zero=False):
        torch.manual_seed(11)
        self.question = nn.Linear(DIMS, num)
        if zero:
            with torch.no_grad():
                self.question.weight.zero_()
                self.question.bias.zero_()

    def inputs(self, obs, bt=None):
        return obs

    def evaluate(self, inputs, params=None):
        if params is None:
            return torch.tanh(self.question(inputs))
        return torch.tanh(functional_call(self.question, params, (inputs,)))

    def state_dict(self):
        return {"question": self.question.state_dict()}

    def load_state_dict(self, sd):
        self.question.load_state_dict(sd["question"])


def learner(fused=True, source=None, seed=0, **kw):
    torch.manual_seed(seed)
    net = AgentNet(AgentConfig(num_actions=3, num_gvfs=2, input_dim=DIMS, use_features=fused,
                               use_layernorm=fused, projection_dim=4, gvf_hidden=5, hidden_arch=(8,)))
    return Learner(net, source if source is not None else Source(), **kw)


def batch(seed, n=8):
    g = torch.Generator().manual_seed(seed)
    return BatchTensors(
        s=torch.randn(n, DIMS, generator=g), a=torch.randint(0, 3, (n,), generator=g),
        r=torch.randn(n, generator=g), s_next=torch.randn(n, DIMS, generator=g),
        done=(torch.rand(n, generator=g) < 0.2).float(),
    )


def snapshot(lr):
    return {n: p.detach().clone() for n, p in lr.params.items()}


def test_trace_capped_at_unroll_steps():
    lr = learner(unroll_steps=10)
    for i in range(15):
        lr.inner_update(batch(i))
    assert len(lr.trace) == 10
    assert torch.equal(lr.trace[0].batch.s, batch(5).s)


def test_not_ready_batch_is_a_no_op():
    lr = learner()
    before = snapshot(lr)
    assert lr.inner_update(None) is None
    assert lr.updates == 0 and not lr.trace
    assert all(torch.equal(before[n], p) for n, p in lr.params.items())


def test_inner_update_deterministic():
    a, b = learner(), learner()
    for i in range(3):
        a.inner_update(batch(i))
        b.inner_update(batch(i))
    assert all(torch.equal(a.params[n], b.params[n]) for n in a.params)


def test_zero_cumulants_zero_heads_is_pure_ddqn_step():
    lr = learner(source=Source(zero=True))
    with torch.no_grad():
        lr.agent.gvf_heads.w2.zero_()
        lr.agent.gvf_heads.b2.zero_()
    bt = batch(0)
    before = snapshot(lr)
    gl, dl = lr.losses(lr.params, bt, torch.zeros(8, 2), lr.target)
    assert gl.item() == 0.0
    names = list(lr.params)
    grads = dict(zip(names, torch.autograd.grad(dl, [lr.params[n] for n in names], allow_unused=True)))
    expected, _ = optimizer_step("adam", before, grads, zero_opt_state(before), lr.lr)
    out = lr.inner_update(bt)
    assert out["gvf_loss"] == 0.0
    assert all(torch.allclose(lr.params[n], expected[n], atol=1e-7) for n in names)


def test_target_sync_period():
    lr = learner(target_period=3)
    initial = {n: t.clone() for n, t in lr.target.items()}
    lr.inner_update(batch(0))
    lr.inner_update(batch(1))
    assert all(torch.equal(initial[n], lr.target[n]) for n in initial)
    lr.inner_update(batch(2))
    assert all(torch.equal(lr.params[n].detach(), lr.target[n]) for n in initial)
    x = torch.randn(4, DIMS)
    with torch.no_grad():
        online = lr.agent(x).q
        target = functional_call(lr.agent, lr.target, (x,)).q
    assert torch.equal(online, target)


def test_question_changes_only_in_meta_update():
    lr = learner()
    eta0 = {n: p.detach().clone() for n, p in lr.source.question.named_parameters()}
    for i in range(4):
        lr.inner_update(batch(i))
    assert all(torch.equal(eta0[n], p) for n, p in lr.source.question.named_parameters())
    norm = lr.meta_update(batch(100, n=10))
    assert norm is not None and norm > 0
    assert not lr.trace
    assert any(not torch.equal(eta0[n], p) for n, p in lr.source.question.named_parameters())


def test_meta_update_without_trace_is_a_no_op():
    lr = learner()
    eta0 = {n: p.detach().clone() for n, p in lr.source.question.named_parameters()}
    assert lr.meta_update(batch(0)) is None
    lr.inner_update(batch(1))
    assert lr.meta_update(None) is None and not lr.trace
    assert all(torch.equal(eta0[n], p) for n, p in lr.source.question.named_parameters())


def test_aux_only_heads_tracked_gives_exact_zero():
    lr = learner(fused=False, track="heads")
    for i in range(3):
        lr.inner_update(batch(i))
    grads = lr.meta_gradient(batch(50))
    assert all(torch.count_nonzero(g) == 0 for g in grads.values())


def test_aux_only_auto_tracks_encoder_path():
    lr = learner(fused=False)
    assert any(n.startswith("gvf_heads.") for n in lr.tracked)
    fused = learner(fused=True)
    assert set(fused.tracked) == {n for n in fused.params if n.startswith(("gvf_heads.", "projection."))}


def test_fused_meta_gradient_nonzero():
    lr = learner(track="heads")
    for i in range(3):
        lr.inner_update(batch(i))
    grads = lr.meta_gradient(batch(50))
    assert sum(float(g.abs().sum()) for g in grads.values()) > 0


def test_non_finite_loss_aborts():
    lr = learner()
    bt = batch(0)
    bt.r[0] = float("nan")
    with pytest.raises(TrainingAborted):
        lr.inner_update(bt)


def test_state_dict_roundtrip():
    a = learner()
    for i in range(3):
        a.inner_update(batch(i))
    a.meta_update(batch(9))
    b = learner(seed=5)
    b.load_state_dict(a.state_dict())
    for i in range(3, 6):
        a.inner_update(batch(i))
        b.inner_update(batch(i))
    a.meta_update(batch(10))
    b.meta_update(batch(10))
    assert all(torch.equal(a.params[n], b.params[n]) for n in a.params)
    assert all(torch.equal(p, q) for p, q in zip(a.source.question.parameters(), b.source.question.parameters()))


def test_epsilon_schedule():
    assert epsilon_at(0, 1.0, 0.01, 0.8, 5000) == 1.0
    assert epsilon_at(2000, 1.0, 0.01, 0.8, 5000) == pytest.approx(0.505)
    assert epsilon_at(4000, 1.0, 0.01, 0.8, 5000) == pytest.approx(0.01)
    assert epsilon_at(4999, 1.0, 0.01, 0.8, 5000) == pytest.approx(0.01)


def test_functional_adam_matches_torch():
    torch.manual_seed(0)
    w = torch.randn(4, requires_grad=True)
    opt = torch.optim.Adam([w], lr=0.01)
    params = {"w": w.detach().clone()}
    state = zero_opt_state(params)
    for step in range(5):
        g = torch.randn(4)
        w.grad = g.clone()
        opt.step()
        params, state = optimizer_step("adam", params, {"w": g}, state, 0.01)
    assert torch.allclose(params["w"], w.detach(), atol=1e-6)


def test_learner_rejects_bad_options():
    with pytest.raises(ValueError):
        learner(inner_optimizer="rmsprop")
    with pytest.raises(ValueError):
        learner(track="everything")
    net = AgentNet(AgentConfig(input_dim=DIMS))
    with pytest.raises(ValueError):
        Learner(net, None)
