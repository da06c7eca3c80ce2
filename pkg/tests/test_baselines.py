import numpy as np
import pytest
import torch

from ocgvf.baselines import (
    VARIANTS,
    HandcraftedCumulants,
    MetaConvCumulants,
    MetaSlotCumulants,
    RandomCumulants,
    get_variant,
    handcrafted_cumulants,
    make_agent,
    random_cumulants,
)
from ocgvf.config import ExperimentConfig
from ocgvf.envs import Action, CollectObjects
from ocgvf.errors import ConfigurationError
from ocgvf.meta import BatchTensors
from ocgvf.question import ConvQuestionNet

U, R, L = Action.UP, Action.RIGHT, Action.LEFT


def config(**kw):
    return ExperimentConfig.for_env(kw.pop("env", "collect_objects"), **kw)


def test_variant_flags():
    oc = get_variant("oc_gvf")
    assert (oc.use_features, oc.use_layernorm, oc.gvf_kind, oc.cumulant_source) == (True, True, "state", "meta_slots")
    dis = get_variant("dis_aux_gvf")
    assert (dis.use_features, dis.gvf_kind, dis.cumulant_source) == (False, "action", "meta_conv")
    assert not get_variant("ddqn").uses_gvfs
    assert len(VARIANTS) == 11


def test_unknown_variant_lists_ids():
    with pytest.raises(ConfigurationError) as err:
        get_variant("a3c")
    assert "oc_gvf" in str(err.value) and "ddqn" in str(err.value)


def test_make_ddqn_has_no_gvf_machinery():
    agent = make_agent("ddqn", config(), 4)
    assert agent.learner.source is None and agent.slot_model is None
    assert not hasattr(agent.learner.agent, "gvf_heads")
    bt = BatchTensors(torch.rand(4, 32, 32, 3), torch.zeros(4, dtype=torch.int64), torch.zeros(4),
                      torch.rand(4, 32, 32, 3), torch.zeros(4))
    assert agent.learner.inner_update(bt)["gvf_loss"] == 0.0


def test_make_oc_gvf():
    agent = make_agent("oc_gvf", config(), 4)
    assert agent.learner.agent.gvf_heads.num_heads == 5
    assert agent.slot_model.config.num_slots == 5
    assert isinstance(agent.learner.source, MetaSlotCumulants)
    assert agent.learner.agent.fused


def test_make_dis_aux_gvf():
    agent = make_agent("dis_aux_gvf", config(), 4)
    src = agent.learner.source
    assert isinstance(src, MetaConvCumulants) and isinstance(src.question, ConvQuestionNet)
    assert agent.slot_model is None
    assert not agent.learner.agent.fused
    assert agent.learner.agent.gvf_heads.outputs == 4


def test_make_agent_is_seeded():
    a = make_agent("oc_gvf", config(), 4, seed=3)
    b = make_agent("oc_gvf", config(), 4, seed=3)
    pa = dict(a.learner.agent.named_parameters())
    assert all(torch.equal(pa[n], p) for n, p in b.learner.agent.named_parameters())


def test_inconsistent_flags_rejected():
    with pytest.raises(ConfigurationError):
        make_agent("hc_gvf", config(env="coinrun"), 15)
    with pytest.raises(ConfigurationError):
        make_agent("hc_gvf", config(num_gvfs=4, sa_num_slots=4), 4)
    with pytest.raises(ConfigurationError):
        make_agent("oc_gvf", config(num_gvfs=4), 4)


def test_aux_only_control_loss_ignores_heads():
    agent = make_agent("random_gvf", config(), 4).learner.agent
    agent.q_values(torch.rand(2, 32, 32, 3)).sum().backward()
    assert agent.gvf_heads.w2.grad is None and agent.gvf_heads.b2.grad is None


def test_random_fixed_net_is_deterministic():
    src = RandomCumulants(5, seed=0)
    obs = np.random.default_rng(0).random((3, 32, 32, 3)).astype(np.float32)
    a, b = random_cumulants(obs, src), random_cumulants(obs, src)
    assert len(a) == 3 and a[0].shape == (5,)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(np.abs(x).max() <= 1.0 for x in a)


def test_random_iid_statistics():
    src = RandomCumulants(5, mode="iid_uniform", seed=0)
    draws = src.evaluate(torch.zeros(2000, 32, 32, 3))  # 10^4 values
    assert draws.shape == (2000, 5)
    assert abs(float(draws.mean())) < 0.02
    assert float(draws.min()) >= -1.0 and float(draws.max()) <= 1.0
    again = src.evaluate(torch.zeros(2000, 32, 32, 3))
    assert not torch.equal(draws, again)


def test_random_mode_validation():
    with pytest.raises(ConfigurationError):
        RandomCumulants(5, mode="gaussian")


def test_handcrafted_from_env():
    env = CollectObjects()
    env.reset()
    env.step(R)
    env.step(R)
    for _ in range(4):
        env.step(U)
    assert handcrafted_cumulants(env).tolist() == [0, 0, 1, 0, 0]  # corridor (5, 3)
    env.step(U)
    assert handcrafted_cumulants(env).tolist() == [0] * 5
    env.step(U)
    env.step(U)
    env.step(L)  # red at (2, 2)
    assert handcrafted_cumulants(env).tolist() == [1, 0, 0, 0, 0]


def test_handcrafted_rejects_other_envs():
    class Fake:
        layout = None
        state = None

    with pytest.raises(ConfigurationError):
        handcrafted_cumulants(Fake())
    with pytest.raises(ConfigurationError):
        HandcraftedCumulants().inputs(torch.zeros(1, 32, 32, 3), None)
