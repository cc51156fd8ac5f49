"""Dynamic-pathway message passing over two modality branches.

One recurrent step, shared across all L steps:

    per modality   local MP on the input topology, then graph->pseudo
                   diffusion/refinement/aggregation (G2P)
    across         pseudo states of each modality absorb the other's
    per modality   pseudo->graph redistribution (P2G)

Pseudo-node work is tau * n * n_p per proximity matrix; nothing here forms an
n x n product.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .graph import MultimodalGraph
from .proximity import ProximityChannels, StateProjector, embed_nodes, proximity_matrix

MODALITIES = ("v", "t")
UPDATE_SITES = ("up_local", "up_g2p", "up_p2g", "up_dh", "up_msg")


@dataclass(frozen=True)
class AblationFlags:
    use_visual_pseudo: bool = True
    use_textual_pseudo: bool = True
    use_local: bool = True
    use_global: bool = True
    use_cross_modal: bool = True

    def pseudo_on(self, modality: str) -> bool:
        on = self.use_visual_pseudo if modality == "v" else self.use_textual_pseudo
        return on and self.use_global

    @property
    def cross_on(self) -> bool:
        return self.use_cross_modal and self.pseudo_on("v") and self.pseudo_on("t")

    @classmethod
    def from_dict(cls, d: dict) -> AblationFlags:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown ablation flags: {sorted(extra)}")
        return cls(**{k: bool(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


FULL = AblationFlags()
# The five single-component removals compared against the full model.
ABLATIONS = {
    "no_visual_pseudo": replace(FULL, use_visual_pseudo=False),
    "no_textual_pseudo": replace(FULL, use_textual_pseudo=False),
    "no_local": replace(FULL, use_local=False),
    "no_global": replace(FULL, use_global=False),
    "no_cross_modal": replace(FULL, use_cross_modal=False),
}
LOCAL_ONLY = replace(FULL, use_global=False)


@dataclass
class Affine:
    w: Tensor
    b: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ad.leaky_relu(ad.affine(x, self.w, self.b))


@dataclass
class ModalityBranch:
    proj: StateProjector
    H0: Tensor
    gp: ProximityChannels
    pp: ProximityChannels
    pg: ProximityChannels
    cross: ProximityChannels
    psi: Affine
    sites: dict[str, Affine]

    @classmethod
    def from_params(cls, p: dict, m: str) -> ModalityBranch:
        return cls(
            proj=StateProjector.from_params(p, f"{m}.proj"),
            H0=p[f"{m}.H"],
            gp=ProximityChannels.from_params(p, f"{m}.gp"),
            pp=ProximityChannels.from_params(p, f"{m}.pp"),
            pg=ProximityChannels.from_params(p, f"{m}.pg"),
            cross=ProximityChannels.from_params(p, f"{m}.cross"),
            psi=Affine(p[f"{m}.psi.w"], p[f"{m}.psi.b"]),
            sites={s: Affine(p[f"{m}.{s}.w"], p[f"{m}.{s}.b"]) for s in UPDATE_SITES},
        )


@dataclass
class PathwayState:
    Z: dict[str, Tensor]
    M: dict[str, Tensor]
    H: dict[str, Tensor]
    step: int = 0


@dataclass
class Trace:
    """Per-step numpy snapshots in the caller's node order."""

    states: list[dict[str, np.ndarray]] = field(default_factory=list)
    w_gp_raw: dict[str, np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------- stages

def local_mp(M: Tensor, Z: Tensor, mean_op, psi: Affine) -> Tensor:
    """psi([M_v || Z_v] || mean over neighbours of [M_j || Z_j]).

    ``mean_op`` is the row-normalised adjacency; empty rows give a zero mean.
    """
    if M.shape[0] != Z.shape[0] or mean_op.shape != (Z.shape[0], Z.shape[0]):
        raise ValueError("local_mp: shapes of M, Z and adjacency disagree")
    own = ad.concat_cols(M, Z)
    nbr = ad.sparse_matmul(mean_op, own, name="neighbor_mean")
    return psi(ad.concat_cols(own, nbr))


def glob_mp(H: Tensor, M_G: Tensor, Z: Tensor, br: ModalityBranch,
            normalize: str = "row-softmax") -> tuple[Tensor, Tensor]:
    """Diffuse node messages onto pseudo nodes, refine among them, aggregate back.

    Returns (aggregated node messages n x d, pseudo-state increment n_p x d_s).
    """
    if M_G.shape[0] != Z.shape[0] or H.shape[1] != Z.shape[1]:
        raise ValueError("glob_mp: shapes of H, M_G and Z disagree")
    W_gp = proximity_matrix(H, Z, br.gp, normalize)
    D = ad.matmul(W_gp, M_G)
    W_pp = proximity_matrix(H, H, br.pp, normalize)
    D_hat = ad.matmul(W_pp, D)
    dH = br.sites["up_dh"](D_hat)
    W_pg = proximity_matrix(Z, ad.add(H, dH), br.pg, normalize)
    M_hat = ad.matmul(W_pg, br.sites["up_msg"](D_hat))
    return M_hat, dH


def intra_g2p_step(Z: Tensor, M: Tensor, H: Tensor, br: ModalityBranch, mean_op,
                   flags: AblationFlags, modality: str, normalize: str = "row-softmax"):
    """Local update followed by graph-to-pseudo global update.

    Returns (Z_tilde, M_tilde, H_hat).
    """
    if flags.use_local:
        M_l = local_mp(M, Z, mean_op, br.psi)
        Z_hat = ad.add(Z, br.sites["up_local"](M_l))
    else:
        M_l, Z_hat = M, Z
    if not flags.pseudo_on(modality):
        return Z_hat, M_l, H
    M_hat, dH = glob_mp(H, M_l, Z_hat, br, normalize)
    Z_tilde = ad.add(Z_hat, br.sites["up_g2p"](M_hat))
    return Z_tilde, ad.add(M_l, M_hat), ad.add(H, dH)


def inter_modal_step(H_v: Tensor, H_t: Tensor, cross_v: ProximityChannels, cross_t: ProximityChannels,
                     flags: AblationFlags = FULL, normalize: str = "row-softmax") -> tuple[Tensor, Tensor]:
    """Each modality's pseudo states absorb the other's through proximity weights.

    The visual update uses an n_pv x n_pt matrix with rows indexed by visual
    pseudo nodes (and the textual update the mirror image), so both products
    are shape-consistent.
    """
    if H_v.shape[1] != H_t.shape[1]:
        raise ValueError("inter_modal_step: state widths differ")
    if not flags.cross_on:
        return H_v, H_t
    W_tv = proximity_matrix(H_v, H_t, cross_v, normalize)
    W_vt = proximity_matrix(H_t, H_v, cross_t, normalize)
    return ad.add(H_v, ad.matmul(W_tv, H_t)), ad.add(H_t, ad.matmul(W_vt, H_v))


def intra_p2g_step(Z: Tensor, M: Tensor, H: Tensor, br: ModalityBranch, flags: AblationFlags,
                   modality: str, normalize: str = "row-softmax"):
    """Pseudo-to-graph redistribution. Returns (Z, M, H) for the next step."""
    if not flags.pseudo_on(modality):
        return Z, M, H
    M_G, dH = glob_mp(H, M, Z, br, normalize)
    return ad.add(Z, br.sites["up_p2g"](M_G)), ad.add(M, M_G), ad.add(H, dH)


# ---------------------------------------------------------------- forward

def _check(state: PathwayState, step: int):
    for group in (state.Z, state.M, state.H):
        for t in group.values():
            if not np.isfinite(t.data).all():
                raise NonFiniteError(f"non-finite pathway state at step {step}")


def dip_forward(graph: MultimodalGraph, params: dict[str, Tensor], L: int,
                flags: AblationFlags = FULL, normalize: str = "row-softmax",
                trace: Trace | None = None) -> tuple[Tensor, Tensor]:
    """Final node states (Z_v, Z_t) after L recurrent steps.

    Nodes are processed in the graph's canonical order and the outputs are
    gathered back into the caller's order.
    """
    if L < 0:
        raise ValueError("L must be non-negative")
    dtype = params["v.H"].data.dtype
    order = graph.canonical_order
    where = np.argsort(order)
    cg = graph.canonical
    mean_op = cg.mean_operator(dtype)
    branches = {m: ModalityBranch.from_params(params, m) for m in MODALITIES}
    feats = {"v": cg.feat_v, "t": cg.feat_t}

    Z = {m: embed_nodes(Tensor(feats[m].astype(dtype)), branches[m].proj) for m in MODALITIES}
    state = PathwayState(Z=Z, M=dict(Z), H={m: branches[m].H0 for m in MODALITIES})

    def snapshot(tag: str):
        if trace is not None:
            snap = {"step": state.step, "stage": tag}
            for m in MODALITIES:
                snap[f"Z_{m}"] = state.Z[m].data[where].copy()
                snap[f"M_{m}"] = state.M[m].data[where].copy()
                snap[f"H_{m}"] = state.H[m].data.copy()
            trace.states.append(snap)

    snapshot("init")
    for step in range(1, L + 1):
        try:
            state = _step(state, step, branches, mean_op, flags, normalize, trace, where)
        except NonFiniteError as exc:
            raise NonFiniteError(f"step {step}: {exc}") from exc
        _check(state, step)
        snapshot("step")

    return ad.gather_rows(state.Z["v"], where), ad.gather_rows(state.Z["t"], where)


def _step(state: PathwayState, step: int, branches, mean_op, flags: AblationFlags, normalize: str,
          trace: Trace | None, where: np.ndarray) -> PathwayState:
    Zt, Mt, Ht = {}, {}, {}
    for m in MODALITIES:
        Zt[m], Mt[m], Ht[m] = intra_g2p_step(state.Z[m], state.M[m], state.H[m], branches[m],
                                             mean_op, flags, m, normalize)
        if trace is not None and step == 1 and flags.pseudo_on(m):
            z_hat = _z_hat(state, branches[m], mean_op, m) if flags.use_local else state.Z[m]
            raw = proximity_matrix(state.H[m], z_hat, branches[m].gp, "none")
            trace.w_gp_raw[m] = raw.data[:, where].copy()
    Ht["v"], Ht["t"] = inter_modal_step(Ht["v"], Ht["t"], branches["v"].cross, branches["t"].cross,
                                        flags, normalize)
    nxt = PathwayState({}, {}, {}, step)
    for m in MODALITIES:
        nxt.Z[m], nxt.M[m], nxt.H[m] = intra_p2g_step(Zt[m], Mt[m], Ht[m], branches[m], flags, m, normalize)
    return nxt


def _z_hat(state: PathwayState, br: ModalityBranch, mean_op, m: str) -> Tensor:
    # node states that the first G2P diffusion compares against the pseudo nodes
    M_l = local_mp(state.M[m], state.Z[m], mean_op, br.psi)
    return ad.add(state.Z[m], br.sites["up_local"](M_l))
