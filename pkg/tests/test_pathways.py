import numpy as np
import pytest
from conftest import random_graph, small_model

import oracle
from dip import autodiff as ad
from dip.autodiff import NonFiniteError, Tensor
from dip.graph import MultimodalGraph, build_adjacency
from dip.model import as_tensors, init_params, reinit_pseudo_banks, zero_update_sites
from dip.pathways import (ABLATIONS, FULL, LOCAL_ONLY, AblationFlags, ModalityBranch, Trace, dip_forward,
                          glob_mp, inter_modal_step, intra_g2p_step, intra_p2g_step, local_mp)
from dip.proximity import log_proximity

TOL = 1e-10


def branch(params, m="v"):
    return ModalityBranch.from_params(as_tensors(params), m)


def states(n, n_p, d_s, seed):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d_s)), rng.normal(size=(n, d_s)), rng.normal(size=(n_p, d_s))


def small_scale(params, factor=0.3):
    return {k: v * factor for k, v in params.items()}


# ---------------------------------------------------------------- local MP

def test_local_mp_empty_graph_uses_zero_mean(tiny):
    _, cfg, p = tiny
    n = 6
    M, Z, _ = states(n, 1, cfg.d_s, 0)
    mean_op = build_adjacency([], n).mean_operator()
    br = branch(p)
    out = local_mp(Tensor(M), Tensor(Z), mean_op, br.psi).data
    own = np.concatenate([M, Z, np.zeros((n, 2 * cfg.d_s))], axis=1)
    np.testing.assert_allclose(out, oracle.lrelu(own @ p["v.psi.w"] + p["v.psi.b"]), atol=1e-14)


def test_local_mp_identical_rows_stay_identical(tiny):
    _, cfg, p = tiny
    n = 7
    row = np.random.default_rng(0).normal(size=(1, cfg.d_s))
    M = Z = np.repeat(row, n, axis=0)
    mean_op = build_adjacency([(i, i + 1) for i in range(n - 1)], n).mean_operator()
    out = local_mp(Tensor(M), Tensor(Z), mean_op, branch(p).psi).data
    assert np.all(out == out[0])


def test_local_mp_path_graph_brute_force(tiny):
    _, cfg, p = tiny
    edges = [(0, 1), (1, 2), (2, 3)]
    M, Z, _ = states(4, 1, cfg.d_s, 3)
    out = local_mp(Tensor(M), Tensor(Z), build_adjacency(edges, 4).mean_operator(), branch(p).psi).data
    ref = oracle.local_mp(M, Z, oracle.neighbour_lists(edges, 4), p, "v")
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_local_mp_shape_mismatch(tiny):
    _, cfg, p = tiny
    with pytest.raises(ValueError):
        local_mp(Tensor(np.ones((3, cfg.d_s))), Tensor(np.ones((4, cfg.d_s))),
                 build_adjacency([], 4).mean_operator(), branch(p).psi)


# ---------------------------------------------------------------- global MP

def test_glob_mp_zero_messages(tiny):
    _, cfg, p = tiny
    p = {k: (np.zeros_like(v) if k.startswith("v.up_") and k.endswith(".b") else v) for k, v in p.items()}
    _, Z, H = states(10, cfg.n_p_v, cfg.d_s, 1)
    M_hat, dH = glob_mp(Tensor(H), Tensor(np.zeros((10, cfg.d_s))), Tensor(Z), branch(p))
    np.testing.assert_array_equal(M_hat.data, 0)
    np.testing.assert_array_equal(dH.data, 0)


def test_glob_mp_single_pseudo_node_is_weighted_mean():
    g = random_graph(9, seed=2)
    cfg, p = small_model(g, n_p_v=1)
    M, Z, H = states(9, 1, cfg.d_s, 2)
    br = branch(p)
    from dip.proximity import proximity_matrix
    W = proximity_matrix(Tensor(H), Tensor(Z), br.gp).data
    assert W.shape == (1, 9)
    assert abs(W.sum() - 1) < 1e-12
    assert np.all(W > 0)


@pytest.mark.parametrize("normalize", ["row-softmax", "none"])
def test_glob_mp_matches_dense_transcription(normalize):
    g = random_graph(20, seed=5)
    cfg, p = small_model(g, n_p_v=3, seed=5)
    if normalize == "none":
        p = small_scale(p)
    M, Z, H = states(20, 3, cfg.d_s, 5)
    M_hat, dH = glob_mp(Tensor(H), Tensor(M), Tensor(Z), branch(p), normalize)
    ref_M, ref_dH = oracle.glob_mp(H, M, Z, p, "v", normalize)
    np.testing.assert_allclose(M_hat.data, ref_M, atol=TOL, rtol=0)
    np.testing.assert_allclose(dH.data, ref_dH, atol=TOL, rtol=0)


def test_glob_mp_never_forms_node_by_node_product():
    n = 60
    g = random_graph(n, seed=6)
    cfg, p = small_model(g, n_p_v=4)
    M, Z, H = states(n, 4, cfg.d_s, 6)
    with ad.log_ops() as log:
        glob_mp(Tensor(H), Tensor(M), Tensor(Z), branch(p))
    assert log.matmuls
    assert not [s for s in log.matmuls if s[0] >= n and s[2] >= n]


# ---------------------------------------------------------------- G2P / P2G

def _oracle_flags(flags):
    return flags.to_dict()


@pytest.mark.parametrize("flags", [FULL, ABLATIONS["no_local"], ABLATIONS["no_global"],
                                   ABLATIONS["no_visual_pseudo"]], ids=lambda f: str(sorted(f.to_dict().items())))
def test_g2p_matches_transcription(flags):
    g = random_graph(15, seed=7)
    cfg, p = small_model(g, seed=7)
    M, Z, H = states(15, cfg.n_p_v, cfg.d_s, 7)
    out = intra_g2p_step(Tensor(Z), Tensor(M), Tensor(H), branch(p), g.mean_operator(), flags, "v")
    ref = oracle.g2p(Z, M, H, oracle.neighbour_lists(g.adjacency.edges(), 15), p, "v", _oracle_flags(flags),
                     "row-softmax")
    for a, b in zip(out, ref):
        np.testing.assert_allclose(a.data, b, atol=TOL, rtol=0)


def test_g2p_all_off_is_identity(tiny):
    g, cfg, p = tiny
    M, Z, H = states(g.n, cfg.n_p_v, cfg.d_s, 0)
    off = AblationFlags(use_local=False, use_global=False)
    Zt, Mt, Ht = intra_g2p_step(Tensor(Z), Tensor(M), Tensor(H), branch(p), g.mean_operator(), off, "v")
    assert np.array_equal(Zt.data, Z) and np.array_equal(Mt.data, M) and np.array_equal(Ht.data, H)


def test_g2p_zero_update_sites_preserve_state(tiny):
    g, cfg, p = tiny
    p = zero_update_sites(p)
    M, Z, H = states(g.n, cfg.n_p_v, cfg.d_s, 0)
    Zt, _, Ht = intra_g2p_step(Tensor(Z), Tensor(M), Tensor(H), branch(p), g.mean_operator(), FULL, "v")
    assert np.array_equal(Zt.data, Z) and np.array_equal(Ht.data, H)


def test_p2g_matches_transcription():
    g = random_graph(15, seed=8)
    cfg, p = small_model(g, seed=8)
    M, Z, H = states(15, cfg.n_p_t, cfg.d_s, 8)
    out = intra_p2g_step(Tensor(Z), Tensor(M), Tensor(H), branch(p, "t"), FULL, "t")
    ref = oracle.p2g(Z, M, H, p, "t", FULL.to_dict(), "row-softmax")
    for a, b in zip(out, ref):
        np.testing.assert_allclose(a.data, b, atol=TOL, rtol=0)


def test_p2g_zero_sites_and_disabled_global(tiny):
    g, cfg, p = tiny
    M, Z, H = states(g.n, cfg.n_p_v, cfg.d_s, 0)
    out = intra_p2g_step(Tensor(Z), Tensor(M), Tensor(H), branch(zero_update_sites(p)), FULL, "v")
    assert np.array_equal(out[0].data, Z) and np.array_equal(out[2].data, H)
    out = intra_p2g_step(Tensor(Z), Tensor(M), Tensor(H), branch(p), ABLATIONS["no_global"], "v")
    assert all(np.array_equal(a.data, b) for a, b in zip(out, (Z, M, H)))


# ---------------------------------------------------------------- cross-modal

def _cross_setup(n_pv=2, n_pt=3, seed=9):
    g = random_graph(5, seed=seed)
    cfg, p = small_model(g, n_p_v=n_pv, n_p_t=n_pt, seed=seed)
    rng = np.random.default_rng(seed)
    return p, rng.normal(size=(n_pv, cfg.d_s)), rng.normal(size=(n_pt, cfg.d_s))


def test_inter_modal_per_pair_oracle():
    p, Hv, Ht = _cross_setup()
    for normalize in ("row-softmax", "none"):
        out = inter_modal_step(Tensor(Hv), Tensor(Ht), branch(p, "v").cross, branch(p, "t").cross, FULL, normalize)
        ref = oracle.cross(Hv, Ht, p, FULL.to_dict(), normalize)
        np.testing.assert_allclose(out[0].data, ref[0], atol=1e-12)
        np.testing.assert_allclose(out[1].data, ref[1], atol=1e-12)


def test_inter_modal_zero_text_states():
    p, Hv, Ht = _cross_setup()
    Hv2, _ = inter_modal_step(Tensor(Hv), Tensor(np.zeros_like(Ht)), branch(p, "v").cross, branch(p, "t").cross,
                              FULL, "none")
    np.testing.assert_array_equal(Hv2.data, Hv)


def test_inter_modal_swap_symmetry():
    p, Hv, Ht = _cross_setup(3, 3)
    cv, ct = branch(p, "v").cross, branch(p, "t").cross
    a = inter_modal_step(Tensor(Hv), Tensor(Ht), cv, ct)
    b = inter_modal_step(Tensor(Ht), Tensor(Hv), ct, cv)
    np.testing.assert_array_equal(a[0].data, b[1].data)
    np.testing.assert_array_equal(a[1].data, b[0].data)


def test_inter_modal_disabled():
    p, Hv, Ht = _cross_setup()
    out = inter_modal_step(Tensor(Hv), Tensor(Ht), branch(p, "v").cross, branch(p, "t").cross,
                           ABLATIONS["no_cross_modal"])
    assert np.array_equal(out[0].data, Hv) and np.array_equal(out[1].data, Ht)


# ---------------------------------------------------------------- forward

def test_forward_L0_is_embedding(tiny):
    g, cfg, p = tiny
    Zv, Zt = dip_forward(g, as_tensors(p), 0)
    np.testing.assert_array_equal(Zv.data, oracle.embed(g.feat_v, p, "v"))
    np.testing.assert_array_equal(Zt.data, oracle.embed(g.feat_t, p, "t"))


@pytest.mark.parametrize("L", [1, 3, 8])
def test_forward_zero_update_sites_identity(tiny, L):
    g, cfg, p = tiny
    z0 = dip_forward(g, as_tensors(p), 0)
    zl = dip_forward(g, as_tensors(zero_update_sites(p)), L)
    for a, b in zip(z0, zl):
        assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize("L", [1, 2])
@pytest.mark.parametrize("name", ["full", *ABLATIONS])
def test_forward_matches_oracle(L, name):
    flags = FULL if name == "full" else ABLATIONS[name]
    g = random_graph(14, seed=10)
    cfg, p = small_model(g, seed=10)
    out = dip_forward(g, as_tensors(p), L, flags)
    ref = oracle.forward(g.feat_v, g.feat_t, g.adjacency.edges(), p, L, flags.to_dict())
    for a, b in zip(out, ref):
        np.testing.assert_allclose(a.data, b, atol=TOL, rtol=0)


def test_forward_raw_mode_matches_oracle():
    g = random_graph(12, seed=11)
    cfg, p = small_model(g, seed=11)
    p = small_scale(p)
    out = dip_forward(g, as_tensors(p), 1, normalize="none")
    ref = oracle.forward(g.feat_v, g.feat_t, g.adjacency.edges(), p, 1, normalize="none")
    for a, b in zip(out, ref):
        np.testing.assert_allclose(a.data, b, atol=TOL, rtol=0)


@pytest.mark.parametrize("seed", range(3))
def test_forward_permutation_equivariance(seed):
    g = random_graph(30, seed=seed)
    cfg, p = small_model(g, seed=seed)
    perm = np.random.default_rng(seed).permutation(g.n)
    inv = np.argsort(perm)
    a = dip_forward(g, as_tensors(p), 3)
    b = dip_forward(g.permute(perm), as_tensors(p), 3)
    for x, y in zip(a, b):
        assert np.array_equal(y.data, x.data[inv])


def test_global_off_ignores_pseudo_banks(tiny):
    g, cfg, p = tiny
    a = dip_forward(g, as_tensors(p), 3, LOCAL_ONLY)
    b = dip_forward(g, as_tensors(reinit_pseudo_banks(p, 123)), 3, LOCAL_ONLY)
    for x, y in zip(a, b):
        assert np.array_equal(x.data, y.data)


def test_forward_step_costs_are_linear_in_n():
    n, n_pv, n_pt = 80, 4, 3
    g = random_graph(n, seed=12, p_edge=0.05)
    cfg, p = small_model(g, n_p_v=n_pv, n_p_t=n_pt, d_s=8, tau=4)
    with ad.log_ops() as ops, log_proximity() as prox:
        dip_forward(g, as_tensors(p), 2)
    assert not [s for s in ops.matmuls if s[0] >= n and s[2] >= n]
    bound = 8 * cfg.tau * cfg.d_c * (n * max(n_pv, n_pt) + n_pv ** 2 + n_pt ** 2 + n_pv * n_pt)
    assert prox.pair_madds <= 2 * bound


def test_trace_records_raw_heatmap(tiny):
    g, cfg, p = tiny
    tr = Trace()
    dip_forward(g, as_tensors(p), 2, trace=tr)
    assert tr.w_gp_raw["v"].shape == (cfg.n_p_v, g.n)
    assert tr.w_gp_raw["t"].shape == (cfg.n_p_t, g.n)
    assert len(tr.states) == 3
    tr2 = Trace()
    dip_forward(g, as_tensors(p), 2, LOCAL_ONLY, trace=tr2)
    assert tr2.w_gp_raw == {}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_reports_step():
    g = random_graph(10, seed=13)
    cfg, p = small_model(g)
    p = {k: v * 40 for k, v in p.items()}
    with pytest.raises(NonFiniteError, match="step"):
        dip_forward(g, as_tensors(p), 8, normalize="none")


def test_negative_depth_rejected(tiny):
    g, cfg, p = tiny
    with pytest.raises(ValueError):
        dip_forward(g, as_tensors(p), -1)


def test_isolated_nodes_are_legal():
    n = 6
    g = MultimodalGraph(build_adjacency([(0, 1)], n), np.random.default_rng(0).normal(size=(n, 5)),
                        np.random.default_rng(1).normal(size=(n, 4)))
    cfg, p = small_model(g)
    out = dip_forward(g, as_tensors(p), 2)
    ref = oracle.forward(g.feat_v, g.feat_t, [(0, 1)], p, 2)
    np.testing.assert_allclose(out[0].data, ref[0], atol=TOL, rtol=0)


def test_default_init_runs_float32():
    g = random_graph(20, seed=14)
    cfg, _ = small_model(g)
    p32 = init_params(cfg, 0, np.float32)
    Zv, _ = dip_forward(g, as_tensors(p32), 2)
    assert Zv.data.dtype == np.float32
