import numpy as np
import pytest

from blockkoop import load_fixture
from blockkoop.embed import (
    BLTI,
    BLTI_NO_FEEDTHROUGH,
    LTI,
    PITI,
    InputMap,
    classify,
    compose_ld,
    compose_sn,
    embed_chain,
    embed_lti_start,
    embed_sn_start,
    identity_model,
    join,
    model_from_json,
    model_to_json,
    predict_blti,
    reduce,
    split,
    to_blti,
)
from blockkoop.kron import kron_jacobian, kron_power_vec, lift
from blockkoop.model_ir import BlockChain, LtiBlock, Parallel, PreconditionError, SnBlock, eval_sn
from blockkoop.randchain import random_chain
from blockkoop.sim import initial_state

RNG = np.random.default_rng(1234)


def rand_lti(n_x, n_in, n_out, label, feedthrough=True):
    D = RNG.uniform(-1, 1, (n_out, n_in)) if feedthrough else np.zeros((n_out, n_in))
    return LtiBlock(RNG.uniform(-1, 1, (n_x, n_x)) - 2 * np.eye(n_x), RNG.uniform(-1, 1, (n_x, n_in)),
                    RNG.uniform(-1, 1, (n_out, n_x)), D, label)


def rand_sn(n_in, n_out, r, p, label):
    return SnBlock(RNG.uniform(-1, 1, (n_out, r)), RNG.uniform(-1, 1, (n_in, r)), RNG.uniform(-1, 1, (r, p + 1)), label)


def sn_scalar(gamma, label="f"):
    return SnBlock(np.ones((1, 1)), np.ones((1, 1)), np.array([gamma], dtype=float), label)


def lifted_stack(z, p):
    return np.concatenate([kron_power_vec(z, t) for t in range(p + 1)])


# -- starts ---------------------------------------------------------------------


def test_lti_start_mimo():
    g1 = load_fixture("mimo_wh").seq[0]
    m = embed_lti_start(g1)
    assert m.n_z == 2
    assert np.array_equal(m.A, g1.A) and np.array_equal(m.C, g1.C)
    assert m.state_input.degrees == (1,) and np.array_equal(m.state_input.terms[0].K, g1.B)
    assert np.array_equal(m.output_input.terms[0].K, g1.D)
    assert not m.state_input.has_state_dependence()


def test_lti_start_without_feedthrough_has_empty_output_map():
    g1 = load_fixture("mimo_wh_noft").seq[0]
    m = embed_lti_start(g1)
    assert m.output_input.is_empty
    assert classify(m) == BLTI_NO_FEEDTHROUGH


def test_static_gain_start():
    D = np.array([[2.0, -1.0]])
    m = embed_lti_start(LtiBlock(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((1, 0)), D, "K"))
    assert m.n_z == 0
    u = np.array([0.3, 0.7])
    assert np.allclose(m.output(np.zeros(0), u), D @ u)


def test_sn_start_square():
    m = embed_sn_start(sn_scalar([0, 0, 1]))
    assert np.array_equal(m.C, [[0.0]])
    assert m.output_input.degrees == (2,)
    assert np.array_equal(m.output_input.terms[0].K, [[1.0]])
    assert not m.output_input.has_state_dependence()


def test_sn_start_constant():
    m = embed_sn_start(sn_scalar([2.5, 0.0]))
    assert np.array_equal(m.C, [[2.5]]) and m.output_input.is_empty


def test_sn_start_example_block():
    sn = load_fixture("sn_example").seq[0]
    m = embed_sn_start(sn)
    assert np.array_equal(m.C[:, 0], [1.0, -1.0])
    assert m.atlas.coords[0].degree == 0
    for _ in range(20):
        u = RNG.uniform(-2, 2, 2)
        assert np.max(np.abs(m.output(np.ones(1), u) - eval_sn(sn, u))) <= 1e-12


# -- series rules: value checks on the lifted coordinates ----------------------------


def test_compose_ld_identity_equals_lti_start():
    b = rand_lti(2, 2, 1, "G")
    a, c = compose_ld(identity_model(2), b), embed_lti_start(b)
    assert np.array_equal(a.A, c.A) and np.array_equal(a.C, c.C)
    assert np.array_equal(a.state_input.terms[0].coef, c.state_input.terms[0].coef)
    assert np.array_equal(a.output_input.terms[0].coef, c.output_input.terms[0].coef)
    assert a.atlas == c.atlas


def test_compose_ld_block_structure_mimo():
    chain = load_fixture("mimo_wh")
    g1, f2, g3 = chain.seq
    m2 = compose_sn(embed_lti_start(g1), f2)
    m3 = compose_ld(m2, g3)
    n = m2.n_z
    assert np.array_equal(m3.A[n:, :n], g3.B @ m2.C)
    assert np.array_equal(m3.A[n:, n:], g3.A)
    assert np.array_equal(m3.A[:n, n:], np.zeros((n, 2)))
    assert np.array_equal(m3.C, np.hstack([g3.D @ m2.C, g3.C]))


def test_compose_ld_no_feedthrough_stays_empty():
    prev = embed_lti_start(rand_lti(2, 1, 1, "a", feedthrough=False))
    m = compose_ld(prev, rand_lti(1, 1, 1, "b", feedthrough=False))
    assert m.output_input.is_empty


def test_compose_ld_dimension_mismatch():
    with pytest.raises(ValueError):
        compose_ld(identity_model(2), rand_lti(1, 3, 1, "G"))


def check_sn_values(prev, b, trials=10):
    m = compose_sn(prev, b)
    p = b.degree
    for _ in range(trials):
        z = RNG.uniform(-1, 1, prev.n_z)
        u = RNG.uniform(-1, 1, prev.n_u)
        Z = lifted_stack(z, p)
        dz = prev.rhs(z, u)
        expected = np.concatenate([[0.0]] + [kron_jacobian(z, t) @ dz for t in range(1, p + 1)])
        assert np.allclose(m.rhs(Z, u), expected, atol=1e-12)
        assert np.allclose(m.output(Z, u), eval_sn(b, prev.output(z, u)), atol=1e-12)
    return m


@pytest.mark.parametrize("feedthrough", [True, False])
def test_compose_sn_values_after_lti(feedthrough):
    prev = embed_lti_start(rand_lti(2, 2, 2, "G", feedthrough))
    check_sn_values(prev, rand_sn(2, 2, 2, 3, "f"))


def test_compose_sn_values_after_piti():
    prev = compose_ld(embed_sn_start(rand_sn(1, 2, 2, 2, "f0")), rand_lti(2, 2, 2, "G", True))
    m = check_sn_values(prev, rand_sn(2, 1, 2, 2, "f1"))
    assert classify(m) == PITI


def test_compose_sn_blti_structure():
    prev = embed_lti_start(rand_lti(2, 1, 1, "G", feedthrough=False))
    m = compose_sn(prev, sn_scalar([0.1, -0.5, 0.7]))
    A = prev.A
    expected = np.zeros((7, 7))
    expected[1:3, 1:3] = A
    expected[3:, 3:] = np.kron(A, np.eye(2)) + np.kron(np.eye(2), A)
    assert np.array_equal(m.A, expected)
    assert m.output_input.is_empty
    assert classify(m) == BLTI_NO_FEEDTHROUGH
    # B enters the first-power block from the constant, the z block as bilinear term
    B = prev.state_input.terms[0].K
    blti = to_blti(m)
    assert np.allclose(blti.B[1:3], B)
    assert np.allclose(blti.Bbar[0][3:, 1:3], np.kron(B, np.eye(2)) + np.kron(np.eye(2), B))


def test_mimo_step_two_output_degrees():
    chain = load_fixture("mimo_wh")
    m2 = compose_sn(embed_lti_start(chain.seq[0]), chain.seq[1])
    assert m2.output_input.degrees == (1, 2, 3)
    assert m2.n_z == 1 + 2 + 4 + 8


def test_compose_sn_dimension_mismatch():
    with pytest.raises(ValueError):
        compose_sn(identity_model(2), sn_scalar([0, 1]))


# -- junctions -------------------------------------------------------------------


def test_split_copies():
    prev = embed_lti_start(rand_lti(2, 1, 1, "G"))
    a, b = split(prev, 2)
    assert a.atlas == b.atlas == prev.atlas
    assert np.array_equal(a.A, b.A)
    assert len(split(identity_model(1), 3)) == 3
    with pytest.raises(ValueError):
        split(prev, 1)


def test_join_structure_and_doubling():
    m = compose_sn(embed_lti_start(rand_lti(2, 1, 1, "G")), sn_scalar([0.2, 1.0, -0.4]))
    j = join([m, m])
    assert np.array_equal(j.A, np.block([[m.A, np.zeros_like(m.A)], [np.zeros_like(m.A), m.A]]))
    assert np.array_equal(j.C, np.hstack([m.C, m.C]))
    z = RNG.uniform(-1, 1, m.n_z)
    u = RNG.uniform(-1, 1, 1)
    zz = np.concatenate([z, z])
    assert np.allclose(j.output(zz, u), 2 * m.output(z, u))
    assert np.allclose(j.rhs(zz, u), np.concatenate([m.rhs(z, u)] * 2))
    assert join([m]) is m


def test_join_mismatch():
    with pytest.raises(ValueError):
        join([identity_model(1), identity_model(2)])


# -- chain driver ------------------------------------------------------------------


def test_dimensions_of_fixtures():
    assert embed_chain(load_fixture("mimo_wh")).n_z == 17
    assert embed_chain(load_fixture("siso_chain")).n_z == 931


def test_empty_chain_is_identity():
    m = embed_chain(BlockChain((), 2, 2))
    assert m.n_z == 0
    assert np.array_equal(m.output(np.zeros(0), [0.4, -1.0]), [0.4, -1.0])
    assert classify(m) == LTI


def test_pure_lti_series_matches_state_space_composition():
    g1, g3 = rand_lti(2, 2, 2, "G1"), rand_lti(2, 2, 1, "G3")
    m = embed_chain(BlockChain((g1, g3), 2, 1))
    A = np.block([[g1.A, np.zeros((2, 2))], [g3.B @ g1.C, g3.A]])
    B = np.vstack([g1.B, g3.B @ g1.D])
    assert np.allclose(m.A, A) and np.allclose(m.state_input.terms[0].K, B)
    assert np.allclose(m.C, np.hstack([g3.D @ g1.C, g3.C]))
    assert np.allclose(m.output_input.terms[0].K, g3.D @ g1.D)
    assert classify(m) == LTI


def test_pure_lti_parallel_matches_state_space_composition():
    g0, ga, gb = rand_lti(1, 1, 2, "G0"), rand_lti(2, 2, 1, "Ga"), rand_lti(1, 2, 1, "Gb")
    m = embed_chain(BlockChain((g0, Parallel(((ga,), (gb,)))), 1, 1))
    # branch copies of G0 are kept until reduction
    assert m.n_z == 2 * 1 + 2 + 1
    r, _ = reduce(m)
    assert r.n_z == 4
    u = RNG.uniform(-1, 1, 1)
    x = {"G0": RNG.uniform(-1, 1, 1), "Ga": RNG.uniform(-1, 1, 2), "Gb": RNG.uniform(-1, 1, 1)}
    y0 = g0.C @ x["G0"] + g0.D @ u
    y = ga.C @ x["Ga"] + ga.D @ y0 + gb.C @ x["Gb"] + gb.D @ y0
    assert np.allclose(r.output(lift(r.atlas, x), u), y)


def test_leading_parallel_starts_branches_from_input():
    f = sn_scalar([0.0, 0.0, 1.0], "sq")
    g = rand_lti(1, 1, 1, "G")
    m = embed_chain(BlockChain((Parallel(((f,), (g,))),), 1, 1))
    u = np.array([0.7])
    x = {"G": np.array([0.3])}
    z = lift(m.atlas, x)
    assert np.allclose(m.output(z, u), u**2 + g.C @ x["G"] + g.D @ u)


def test_chain_value_equivalence_random():
    from blockkoop.sim import _chain_fn, _state_layout

    for seed in range(8):
        chain = random_chain(seed)
        m = embed_chain(chain)
        g = _chain_fn(chain, _state_layout(chain))
        x0 = {k: RNG.uniform(-1, 1, v.size) for k, v in initial_state(chain).items()}
        x = np.concatenate([x0[k] for k in _state_layout(chain)]) if x0 else np.zeros(0)
        u = RNG.uniform(-1, 1, chain.n_u)
        dx, y = g(x, u)
        z = lift(m.atlas, x0)
        assert np.allclose(m.output(z, u), y, atol=1e-10)


def test_reduce_each_gives_same_values():
    chain = load_fixture("mimo_wh")
    a, _ = reduce(embed_chain(chain))
    b, _ = reduce(embed_chain(chain, reduce_each=True))
    assert b.n_z == a.n_z == 12
    x0 = {"G1": RNG.uniform(-1, 1, 2), "G3": RNG.uniform(-1, 1, 2)}
    u = RNG.uniform(-1, 1, 2)
    assert np.allclose(a.output(lift(a.atlas, x0), u), b.output(lift(b.atlas, x0), u))


# -- reduction, classification ------------------------------------------------------


def test_reduce_counts_and_projection():
    for name, full, red in (("mimo_wh", 17, 12), ("siso_chain", 931, 103)):
        m = embed_chain(load_fixture(name))
        r, rm = reduce(m)
        assert (m.n_z, r.n_z) == (full, red)
        assert np.array_equal(rm.T @ rm.T_dagger, np.eye(red))
        assert len(r.atlas) == red


def test_reduce_preserves_values():
    chain = load_fixture("siso_chain")
    m = embed_chain(chain)
    r, _ = reduce(m)
    x0 = {k: RNG.uniform(-1, 1, v.size) for k, v in initial_state(chain).items()}
    u = RNG.uniform(-1, 1, 1)
    z, zr = lift(m.atlas, x0), lift(r.atlas, x0)
    assert np.allclose(r.rhs(zr, u), m.rhs(z, u)[_keep(m)], atol=1e-12)
    assert np.allclose(r.output(zr, u), m.output(z, u), atol=1e-12)


def _keep(m):
    from blockkoop.kron import dedup

    return dedup(m.atlas).keep


def test_reduce_distinct_atlas_unchanged():
    m = embed_lti_start(rand_lti(3, 1, 1, "G"))
    r, _ = reduce(m)
    assert np.array_equal(r.A, m.A) and np.array_equal(r.C, m.C)


def test_classification_of_fixtures():
    assert classify(embed_chain(load_fixture("mimo_wh"))) == PITI
    assert classify(embed_chain(load_fixture("mimo_wh_noft"))) == BLTI_NO_FEEDTHROUGH
    assert classify(reduce(embed_chain(load_fixture("siso_chain")))[0]) == BLTI_NO_FEEDTHROUGH


def test_classify_lti_and_blti():
    assert classify(embed_lti_start(rand_lti(1, 1, 1, "K", True))) == LTI
    # a strictly proper front keeps the output map empty whatever follows
    g = rand_lti(1, 1, 1, "G", feedthrough=False)
    m = embed_chain(BlockChain((g, sn_scalar([0.0, 1.0, 1.0]), rand_lti(1, 1, 1, "H", True)), 1, 1))
    assert classify(m) == BLTI_NO_FEEDTHROUGH
    # degree-1 output map with a z*u term
    from blockkoop.embed import PitiModel
    from blockkoop.kron import Atlas

    imap = InputMap.build(1, 1, 1, {1: np.array([[[1.0]], [[2.0]]])})
    pm = PitiModel(np.zeros((1, 1)), np.ones((1, 1)), InputMap(1, 1, 1), imap, Atlas.base("x", 1), 1)
    assert classify(pm) == BLTI


def test_predict_blti():
    assert predict_blti(load_fixture("siso_chain"))
    assert predict_blti(load_fixture("mimo_wh_noft"))
    assert not predict_blti(load_fixture("mimo_wh"))
    assert not predict_blti(load_fixture("sn_example"))
    assert not predict_blti(BlockChain((), 1, 1))
    g = rand_lti(1, 1, 1, "G", False)
    lead = BlockChain((Parallel(((g,), (sn_scalar([0, 1], "s"),))),), 1, 1)
    assert not predict_blti(lead)


def test_to_blti():
    m = reduce(embed_chain(load_fixture("siso_chain")))[0]
    b = to_blti(m)
    assert b.B.shape == (103, 1) and b.Bbar.shape == (1, 103, 103)
    z = RNG.uniform(-1, 1, 103)
    u = RNG.uniform(-1, 1, 1)
    assert np.allclose(b.rhs(z, u), m.rhs(z, u))
    lti_only = to_blti(embed_lti_start(rand_lti(2, 2, 1, "G", feedthrough=False)))
    assert not np.any(lti_only.Bbar)
    with pytest.raises(PreconditionError):
        to_blti(embed_chain(load_fixture("mimo_wh")))


def test_model_json_roundtrip():
    m = reduce(embed_chain(load_fixture("mimo_wh")))[0]
    obj = model_to_json(m)
    assert obj["class"] == PITI and obj["n_z"] == 12
    back = model_from_json(obj)
    assert np.array_equal(back.A, m.A) and back.atlas == m.atlas
    z = RNG.uniform(-1, 1, 12)
    u = RNG.uniform(-1, 1, 2)
    assert np.array_equal(back.output(z, u), m.output(z, u))
    assert np.array_equal(back.rhs(z, u), m.rhs(z, u))


def test_input_map_rejects_bad_shape():
    with pytest.raises(ValueError):
        InputMap.build(2, 1, 1, {1: np.ones((3, 2, 1))})
