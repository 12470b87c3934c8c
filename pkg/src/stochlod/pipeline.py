"""Dataset generation, training stages, NN-LOD assembly, evaluation and Monte Carlo."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import fem, lod, mlp, storage
from .config import ExperimentConfig
from .grid import FineGrid, build_coarse_grid, build_fine_grid, patch, prolong_cells, restrict_all
from .randfield import (FieldRealization, HierarchicalParams, MaternParams, child_seed,
                        contrast, sample_gaussian, sample_hierarchical_gaussian)

log = logging.getLogger(__name__)

DATA_BRANCH, FRESH_BRANCH, MC_BRANCH, PRETRAIN_BRANCH = 0, 1, 2, 3
DATA_FILE = "pairs.f64"
MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Scales:
    coarse: object
    eps_grid: FineGrid
    fine: FineGrid
    ell: int

    @property
    def n_elements(self) -> int:
        return self.coarse.n_elements

    @property
    def input_dim(self) -> int:
        return ((2 * self.ell + 1) * self.eps_grid.refinement) ** 2

    @property
    def n_slots(self) -> int:
        return (2 * self.ell + 2) ** 2

    @property
    def target_dim(self) -> int:
        return 4 * self.n_slots


def scales(cfg: ExperimentConfig) -> Scales:
    g = cfg.grid
    coarse = build_coarse_grid(g.H, g.d)
    return Scales(coarse, build_fine_grid(coarse, g.eps), build_fine_grid(coarse, g.h), g.ell)


def model_widths(cfg: ExperimentConfig) -> list[int]:
    sc = scales(cfg)
    if cfg.training.widths:
        widths = list(cfg.training.widths)
        if widths[0] != sc.input_dim or widths[-1] != sc.target_dim:
            raise ValueError(f"configured widths {widths} do not fit input {sc.input_dim} "
                             f"/ output {sc.target_dim}")
        return widths
    return mlp.tapered_widths(sc.input_dim, sc.target_dim)


# -- sampling ---------------------------------------------------------------

def sample_z(cfg: ExperimentConfig, branch: int, index: int, block: int = 0,
             kappa: float | None = None) -> tuple[float, FieldRealization]:
    """Gaussian field for realization ``index`` of a seed branch.

    ``kappa`` fixes the correlation length (representative values); otherwise
    hierarchical configs draw it and lognormal configs use ``field.kappa``.
    """
    fc = cfg.field
    grid = scales(cfg).eps_grid
    seed = child_seed(cfg.seed, branch, block)
    if fc.sigma2 == 0:
        k = kappa if kappa is not None else fc.kappa
        return k, FieldRealization(grid, np.zeros((grid.n, grid.n)), "gaussian",
                                   {"sigma2": 0.0, "index": index})
    if fc.kind == "hierarchical" and kappa is None:
        hp = HierarchicalParams(fc.sigma2, fc.nu, fc.kappa_low, fc.kappa_high)
        return sample_hierarchical_gaussian(hp, grid, seed, index)
    k = fc.kappa if kappa is None else kappa
    return k, sample_gaussian(MaternParams(fc.sigma2, fc.nu, k), grid, seed, index)


def fine_coefficient(sc: Scales, cell_values: np.ndarray) -> np.ndarray:
    return prolong_cells(cell_values, sc.eps_grid, sc.fine)


def vec_locals(mats: np.ndarray) -> np.ndarray:
    """Column-major flattening of each ``N x 4`` local matrix."""
    return mats.transpose(0, 2, 1).reshape(mats.shape[0], -1)


def unvec_locals(vecs: np.ndarray, n_slots: int) -> np.ndarray:
    return np.asarray(vecs).reshape(-1, 4, n_slots).transpose(0, 2, 1)


def local_targets(sc: Scales, coefficient_cells: np.ndarray) -> np.ndarray:
    """``(n_elements, N, 4)`` PG-LOD local matrices for a coefficient on the eps grid."""
    a = fine_coefficient(sc, coefficient_cells)
    return lod.compute_all_local(sc.coarse, sc.fine, a, sc.ell)


def _lognormal_pairs(cfg_dict, block, index, kappa):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    sc = scales(cfg)
    _, z = sample_z(cfg, DATA_BRANCH, index, block, kappa)
    inputs = restrict_all(z.values, sc.eps_grid, sc.ell)
    targets = vec_locals(local_targets(sc, np.exp(z.values)))
    return inputs, targets


def _uniform_pairs(cfg_dict, block, index, kappa):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    sc = scales(cfg)
    rng = np.random.default_rng(child_seed(cfg.seed, PRETRAIN_BRANCH, index))
    m = sc.eps_grid.n
    a = rng.uniform(cfg.pretrain.alpha, cfg.pretrain.beta, size=(m, m))
    inputs = restrict_all(np.log(a), sc.eps_grid, sc.ell)
    targets = vec_locals(local_targets(sc, a))
    return inputs, targets


def _job(args):
    kind, cfg_dict, block, index, kappa = args
    fn = _uniform_pairs if kind == "uniform" else _lognormal_pairs
    return fn(cfg_dict, block, index, kappa)


def _map(jobs, workers: int):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            yield from ex.map(_job, jobs)
    else:
        for j in jobs:
            yield _job(j)


# -- datasets ---------------------------------------------------------------

def split_counts(n: int, split=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return n_train, n_val, n - n_train - n_val


def _write_dataset(out_dir: Path, kind: str, cfg: ExperimentConfig, blocks, n_per_block: int,
                   workers: int, extra: dict) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sc = scales(cfg)
    cfg_dict = cfg.to_dict()
    nT = sc.n_elements
    counts = split_counts(n_per_block, cfg.dataset.split)
    jobs = [(kind, cfg_dict, b, i, kappa) for b, kappa in enumerate(blocks) for i in range(n_per_block)]
    splits = {s: {"realizations": 0, "pairs": 0, "ranges": []} for s in SPLITS}
    record_bytes = 8 * (sc.input_dim + sc.target_dim)
    block_meta = []
    pair = 0
    with open(out_dir / DATA_FILE, "wb") as fh:
        for j, (inputs, targets) in enumerate(_map(jobs, workers)):
            b, i = divmod(j, n_per_block)
            if i == 0:
                block_meta.append({"kappa": blocks[b], "realizations": n_per_block, "first_pair": pair,
                                   "byte_offset": pair * record_bytes})
            name = "train" if i < counts[0] else "val" if i < counts[0] + counts[1] else "test"
            record = np.hstack([inputs, targets]).astype("<f8")
            fh.write(record.tobytes())
            sp_ = splits[name]
            sp_["realizations"] += 1
            sp_["pairs"] += nT
            if sp_["ranges"] and sp_["ranges"][-1][1] == pair:
                sp_["ranges"][-1][1] = pair + nT
            else:
                sp_["ranges"].append([pair, pair + nT])
            pair += nT
            log.info("realization %d/%d written", j + 1, len(jobs))
    manifest = {
        "format": "stochlod-dataset",
        "version": 1,
        "coefficient_class": kind,
        "grid": {"H": cfg.grid.H, "eps": cfg.grid.eps, "h": cfg.grid.h, "ell": cfg.grid.ell},
        "seed": cfg.seed,
        "input_dim": sc.input_dim,
        "target_dim": sc.target_dim,
        "pairs_per_realization": nT,
        "record_doubles": sc.input_dim + sc.target_dim,
        "data_file": DATA_FILE,
        "n_pairs": pair,
        "blocks": block_meta,
        "splits": splits,
        "byte_ranges": {s: [[a * record_bytes, b * record_bytes] for a, b in splits[s]["ranges"]]
                        for s in SPLITS},
        "config": cfg_dict,
    }
    manifest.update(extra)
    storage.write_json(out_dir / MANIFEST, manifest)
    return manifest


def generate_dataset(cfg: ExperimentConfig, out_dir, workers: int = 1) -> dict:
    """Input/target pairs for the configured coefficient class, split 80:10:10 per block."""
    fc = cfg.field
    if fc.kind == "hierarchical":
        blocks = [float(k) for k in fc.kappa_values]
        cls = {"kind": "hierarchical", "sigma2": fc.sigma2, "nu": fc.nu,
               "kappa_range": [fc.kappa_low, fc.kappa_high], "kappa_values": blocks,
               "per_kappa": cfg.dataset.n_realizations}
    else:
        blocks = [float(fc.kappa)]
        cls = {"kind": "lognormal", "sigma2": fc.sigma2, "nu": fc.nu, "kappa": fc.kappa}
    return _write_dataset(out_dir, "lognormal", cfg, blocks, cfg.dataset.n_realizations,
                          workers, {"field": cls})


def load_manifest(dataset_dir) -> dict:
    return json.loads((Path(dataset_dir) / MANIFEST).read_text())


def load_split(dataset_dir, split: str):
    """``(inputs, targets)`` arrays of one split, in generation order."""
    man = load_manifest(dataset_dir)
    width = man["record_doubles"]
    raw = np.memmap(Path(dataset_dir) / man["data_file"], dtype="<f8", mode="r",
                    shape=(man["n_pairs"], width))
    ranges = man["splits"][split]["ranges"]
    if not ranges:
        return np.zeros((0, man["input_dim"])), np.zeros((0, man["target_dim"]))
    block = np.concatenate([np.asarray(raw[a:b]) for a, b in ranges])
    return block[:, :man["input_dim"]].copy(), block[:, man["input_dim"]:].copy()


# -- training stages --------------------------------------------------------

def train_on_dataset(cfg: ExperimentConfig, dataset_dir, model: mlp.MlpModel | None = None,
                     schedule=None, epochs: int | None = None, log_fn=None):
    tc = cfg.training
    if model is None:
        if tc.warm_start:
            model, _, _ = mlp.load_checkpoint(tc.warm_start)
        else:
            model = mlp.MlpModel.init(model_widths(cfg), seed=tc.init_seed)
    train_set = load_split(dataset_dir, "train")
    val_set = load_split(dataset_dir, "val")
    return mlp.train(model, train_set, val_set, schedule=schedule or tc.schedule,
                     epochs=epochs or tc.epochs, batch_size=tc.batch_size,
                     seed=child_seed(cfg.seed, 99), log=log_fn)


def pretrain_uniform(cfg: ExperimentConfig, out_dir, workers: int = 1, log_fn=None):
    """Warm-start network trained on piecewise constant coefficients in [alpha, beta].

    Inputs are log-coefficients so that the input scale matches the Gaussian
    inputs used in later stages.  Writes ``pretrain.ckpt``, the loss trace and
    the synthetic dataset under ``out_dir``.
    """
    out_dir = Path(out_dir)
    pc = cfg.pretrain
    data_dir = out_dir / "pretrain_data"
    _write_dataset(data_dir, "uniform", cfg, [None], pc.n_realizations, workers,
                   {"field": {"kind": "uniform", "alpha": pc.alpha, "beta": pc.beta}})
    model = mlp.MlpModel.init(model_widths(cfg), seed=cfg.training.init_seed)
    model, state, trace = train_on_dataset(cfg, data_dir, model, epochs=pc.epochs, log_fn=log_fn)
    ckpt = out_dir / "pretrain.ckpt"
    mlp.save_checkpoint(ckpt, model)
    trace.to_csv(out_dir / "pretrain_loss.csv")
    return model, trace, ckpt


# -- NN-LOD assembly --------------------------------------------------------

class OraclePredictor:
    """Stands in for a network by returning precomputed local-matrix vectors."""

    def __init__(self, vecs: np.ndarray):
        self.vecs = np.asarray(vecs)

    def __call__(self, inputs):
        return self.vecs


def _virtual_mask(coarse, ell: int) -> np.ndarray:
    return np.stack([patch(coarse, T, ell).node_inside for T in coarse.elements])


def assemble_nn_surrogate(model, z_values: np.ndarray, sc: Scales) -> sp.csr_matrix:
    """Global surrogate from one forward pass over all patches of a realization."""
    inputs = restrict_all(z_values, sc.eps_grid, sc.ell)
    if isinstance(model, mlp.MlpModel):
        if model.weights[0].shape[1] != inputs.shape[1]:
            raise ValueError(f"model input dim {model.weights[0].shape[1]} != patch input {inputs.shape[1]}")
        out = mlp.forward(model, inputs)
    else:
        out = model(inputs)
    if out.shape != (sc.n_elements, sc.target_dim):
        raise ValueError(f"predictor output shape {out.shape} != {(sc.n_elements, sc.target_dim)}")
    mats = unvec_locals(out, sc.n_slots).copy()
    mats[~_virtual_mask(sc.coarse, sc.ell)] = 0.0
    return lod.assemble_global(sc.coarse, mats, sc.ell)


# -- metrics ----------------------------------------------------------------

def spectral_norm(A, tol: float = 1e-8, maxiter: int = 10_000, seed=0) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    Stops once the eigen-residual of the Rayleigh quotient drops below
    ``tol`` relative to the quotient.
    """
    n = A.shape[1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(maxiter):
        w = A.T @ (A @ v)
        lam = float(v @ w)
        if lam == 0.0:
            return 0.0
        if np.linalg.norm(w - lam * v) <= tol * lam:
            break
        v = w / np.linalg.norm(w)
    else:
        log.warning("power iteration hit maxiter=%d", maxiter)
    return float(np.sqrt(lam))


def coarse_l2(u: np.ndarray, coarse) -> float:
    """L2(D) norm of a coarse Q1 function given on all coarse nodes."""
    M = fem.q1_mass(coarse.n, coarse.n, coarse.H)
    return float(np.sqrt(max(u @ (M @ u), 0.0)))


def cross_sections(u: np.ndarray, coarse) -> dict:
    """Values along ``x1 = 0.5`` and ``x2 = 0.5`` at the coarse nodes."""
    n = coarse.n
    img = u.reshape(n + 1, n + 1)
    t = np.linspace(0.0, 1.0, n + 1)
    return {"coordinate": t, "x1": img[:, n // 2].copy(), "x2": img[n // 2, :].copy()}


def _full(coarse, interior: np.ndarray) -> np.ndarray:
    u = np.zeros(coarse.n_nodes)
    u[coarse.interior_nodes] = interior
    return u


@dataclass
class EvalReport:
    test_loss: float
    rows: list = field(default_factory=list)
    sections: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        cols = ["realization", "kappa", "contrast", "l2_error", "spectral_diff", "test_loss"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["realization"], repr(r["kappa"]), repr(r["contrast"]),
                            repr(r["l2_error"]), repr(r["spectral_diff"]), repr(self.test_loss)])

    def to_json(self, path) -> None:
        storage.write_json(path, {"test_loss": self.test_loss, "rows": self.rows})


def write_sections(path, coordinate, columns: dict) -> None:
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coordinate"] + names)
        for k, t in enumerate(coordinate):
            w.writerow([repr(float(t))] + [repr(float(columns[c][k])) for c in names])


def evaluate(cfg: ExperimentConfig, model, n_fresh: int | None = None, dataset_dir=None,
             with_fem: bool = True) -> EvalReport:
    """Compare PG-LOD and NN-LOD on fresh realizations outside every split.

    ``model`` may be an :class:`~stochlod.mlp.MlpModel`, a callable predictor,
    or the string ``"oracle"`` (true local matrices).
    """
    sc = scales(cfg)
    ev = cfg.evaluation
    n_fresh = ev.n_fresh if n_fresh is None else n_fresh
    test_loss = float("nan")
    if dataset_dir is not None:
        if model == "oracle":
            test_loss = 0.0
        elif isinstance(model, mlp.MlpModel):
            xt, yt = load_split(dataset_dir, "test")
            if len(xt):
                test_loss = mlp.dataset_loss(model, xt, yt)
    load = lod.coarse_load(sc.coarse, cfg.grid.f)
    report = EvalReport(test_loss)
    for i in range(n_fresh):
        kappa, z = sample_z(cfg, FRESH_BRANCH, i)
        a_cells = np.exp(z.values)
        mats = local_targets(sc, a_cells)
        S_pg = lod.assemble_global(sc.coarse, mats, sc.ell)
        predictor = OraclePredictor(vec_locals(mats)) if model == "oracle" else model
        S_nn = assemble_nn_surrogate(predictor, z.values, sc)
        u_pg = _full(sc.coarse, lod.solve_pglod(S_pg, load))
        u_nn = _full(sc.coarse, lod.solve_pglod(S_nn, load))
        report.rows.append({
            "realization": i,
            "kappa": kappa,
            "contrast": contrast(a_cells),
            "l2_error": coarse_l2(u_pg - u_nn, sc.coarse),
            "spectral_diff": spectral_norm(S_pg - S_nn, ev.power_tol, ev.power_maxiter),
        })
        cols = {"pglod": cross_sections(u_pg, sc.coarse), "nnlod": cross_sections(u_nn, sc.coarse)}
        if with_fem:
            u_fem = fem.solve_fem(sc.fine, fine_coefficient(sc, a_cells), cfg.grid.f).at_coarse_nodes()
            cols = {"fem": cross_sections(u_fem, sc.coarse), **cols}
        report.sections.append(cols)
    return report


# -- Monte Carlo ------------------------------------------------------------

@dataclass
class MonteCarloResult:
    n_samples: int
    means: dict  # solver -> all-node coarse values
    coarse: object

    def sections(self) -> dict:
        return {s: cross_sections(u, self.coarse) for s, u in self.means.items()}


def _mc_sample(args):
    cfg_dict, index, solvers, model = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    sc = scales(cfg)
    _, z = sample_z(cfg, MC_BRANCH, index)
    a_cells = np.exp(z.values)
    out = {}
    if "fem" in solvers:
        out["fem"] = fem.solve_fem(sc.fine, fine_coefficient(sc, a_cells), cfg.grid.f).at_coarse_nodes()
    load = lod.coarse_load(sc.coarse, cfg.grid.f)
    if "pglod" in solvers:
        S = lod.assemble_global(sc.coarse, local_targets(sc, a_cells), sc.ell)
        out["pglod"] = _full(sc.coarse, lod.solve_pglod(S, load))
    if "nnlod" in solvers:
        S = assemble_nn_surrogate(model, z.values, sc)
        out["nnlod"] = _full(sc.coarse, lod.solve_pglod(S, load))
    return out


def monte_carlo_mean(cfg: ExperimentConfig, n_samples: int | None = None, solvers=None,
                     model=None, workers: int = 1) -> MonteCarloResult:
    """Sample means of the coarse nodal solutions; all solvers share the samples."""
    n_samples = cfg.mc.n_samples if n_samples is None else n_samples
    solvers = list(cfg.mc.solvers if solvers is None else solvers)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if "nnlod" in solvers and model is None:
        raise ValueError("nnlod requires a model")
    sc = scales(cfg)
    sums = {s: np.zeros(sc.coarse.n_nodes) for s in solvers}
    jobs = [(cfg.to_dict(), i, solvers, model) for i in range(n_samples)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = ex.map(_mc_sample, jobs)
            for res in results:
                for s in solvers:
                    sums[s] += res[s]
    else:
        for job in jobs:
            res = _mc_sample(job)
            for s in solvers:
                sums[s] += res[s]
    return MonteCarloResult(n_samples, {s: v / n_samples for s, v in sums.items()}, sc.coarse)
