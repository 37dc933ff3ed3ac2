"""Two-stage experiment driver.

Stage 1 fits and freezes the shape autoencoder. Stage 2 trains the image
encoder and discriminators against the frozen prior, evaluating on held-out
RENDERED (model selection) and NATURAL (reported metric) splits. Every run
writes an append-only JSON-lines record next to its checkpoints.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoints as ck
from .config import ExperimentConfig, config_hash
from .darec_net import DarecNet, LossSwitches
from .errors import ChecksumMismatchError, ConfigError, DivergenceError, InvalidInputError
from .geometry import EvalConfig, MetricReport, chamfer_distance, sample_isosurface, voxel_iou
from .shape_prior import VOXEL, PriorTrainConfig, PriorTrainState, ShapeAutoencoder, train_prior
from .synthdata import Domain, ShapeImageDataset, generate_dataset, load_dataset

log = logging.getLogger(__name__)

PRIOR_FILE = "prior.pt"
PRIOR_PARTIAL = "prior_partial.pt"
RECORD_FILE = "run.jsonl"
BEST_FILE = "best.pt"
FINAL_FILE = "final.pt"

ABLATION_ROWS = (
    LossSwitches(True, False, False),
    LossSwitches(True, False, True),
    LossSwitches(True, True, False),
    LossSwitches(True, True, True),
)

# held-out CD per row at full scale, kept for the report only
REFERENCE_CD = {
    VOXEL: {"rec": 0.220, "rec+shape": 0.196, "rec+img": 0.156, "rec+img+shape": 0.140},
    "pointcloud": {"rec": 0.148, "rec+shape": 0.140, "rec+img": 0.129, "rec+img+shape": 0.112},
}


# --------------------------------------------------------------------------
# data helpers


_DATA_CACHE: dict = {}


def load_data(cfg: ExperimentConfig) -> ShapeImageDataset:
    """Dataset from ``cfg.data_path`` or generated in memory from ``cfg.dataset``."""
    if cfg.data_path:
        key = ("path", str(Path(cfg.data_path).resolve()))
    else:
        key = ("spec", json.dumps(cfg.dataset.to_dict(), sort_keys=True))
    if key not in _DATA_CACHE:
        _DATA_CACHE.clear()
        if cfg.data_path:
            _DATA_CACHE[key] = load_dataset(cfg.data_path)
        else:
            _DATA_CACHE[key] = generate_dataset(cfg.dataset)
    return _DATA_CACHE[key]


def manifest_hash(data: ShapeImageDataset) -> str:
    h = hashlib.sha256()
    for rec in data.records:
        h.update(json.dumps(rec, sort_keys=True).encode())
    h.update(data.images.tobytes())
    return h.hexdigest()


def code_hash() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.rglob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def shape_targets(data: ShapeImageDataset, idx, kind: str) -> torch.Tensor:
    arr = data.voxels_for(idx) if kind == VOXEL else data.points_for(idx)
    return torch.as_tensor(arr, dtype=torch.float32)


def _images(data: ShapeImageDataset, idx) -> torch.Tensor:
    return torch.from_numpy(data.image_floats(np.asarray(idx)))


def _check_data(cfg: ExperimentConfig, data: ShapeImageDataset) -> None:
    size = data.images.shape[-1]
    if size != cfg.encoder.image_size:
        raise ConfigError(f"dataset images are {size}px, encoder expects {cfg.encoder.image_size}")
    if cfg.kind == VOXEL and data.resolution != cfg.prior.resolution:
        raise ConfigError(f"dataset resolution {data.resolution} != prior resolution {cfg.prior.resolution}")


# --------------------------------------------------------------------------
# stage 1


def run_stage1(cfg: ExperimentConfig, out_dir=None, data: Optional[ShapeImageDataset] = None,
               max_epochs: Optional[int] = None) -> Path:
    """Train, freeze and persist the shape autoencoder; returns the checkpoint path.

    ``out_dir`` is a run directory (the checkpoint becomes ``prior.pt``) or a
    path ending in ``.pt`` naming the checkpoint itself. A partial checkpoint
    is written every ``stage1.checkpoint_every`` epochs; calling again with
    the same config resumes from it. ``max_epochs`` bounds the work done by
    this call (the run is then left unfinished).
    """
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    if out.suffix == ".pt":
        final, out = out, out.parent
        partial = out / f"{final.stem}_partial.pt"
    else:
        final, partial = out / PRIOR_FILE, out / PRIOR_PARTIAL
    out.mkdir(parents=True, exist_ok=True)
    if final.exists():
        blob = ck.read_prior_blob(final)
        if blob["config"] == cfg.to_dict() and blob["frozen"]:
            return final
        raise ConfigError(f"{final} exists and was produced by a different config")
    data = data or load_data(cfg)
    _check_data(cfg, data)
    shapes = shape_targets(data, data.indices(Domain.RENDERED, "train"), cfg.kind)

    s1 = cfg.stage1
    tcfg = PriorTrainConfig(
        epochs=s1.epochs, batch_size=s1.batch_size, lr=s1.lr, seed=cfg.seed,
        converge_window=s1.converge_window, converge_tol=s1.converge_tol, min_epochs=s1.min_epochs,
    )
    state = None
    t0, spent = time.perf_counter(), 0.0
    torch.manual_seed(cfg.seed)
    ae = ShapeAutoencoder(cfg.prior)
    if partial.exists():
        blob = ck.read_prior_blob(partial)
        if blob["config"] != cfg.to_dict():
            raise ConfigError(f"{partial} belongs to a different config")
        ae.load_state_dict(blob["state_dict"])
        state = PriorTrainState(**blob["train_state"])
        spent = blob.get("wall_clock", 0.0)
        log.info("resuming stage 1 at epoch %d", state.epoch)

    def elapsed():
        return spent + time.perf_counter() - t0

    def on_epoch(model, st):
        log.info("stage1 epoch %d loss %.6f", st.epoch, st.losses[-1])
        if st.epoch % s1.checkpoint_every == 0 or st.converged:
            ck.save_prior(partial, model, cfg.to_dict(), st, wall_clock=elapsed())

    ae, state = train_prior(ae, shapes, tcfg, state, on_epoch=on_epoch, max_epochs=max_epochs)
    ck.save_prior(partial, ae, cfg.to_dict(), state, wall_clock=elapsed())
    if not (state.converged or state.epoch >= s1.epochs):
        return partial
    ae.freeze()
    ck.save_prior(final, ae, cfg.to_dict(), losses=state.losses, wall_clock=elapsed())
    partial.unlink()
    return final


# --------------------------------------------------------------------------
# evaluation


def _binarized_or_argmax(pred: np.ndarray, threshold: float) -> np.ndarray:
    """A predicted grid with no cell above threshold keeps its single most likely cell."""
    if (pred >= threshold).any():
        return pred
    out = np.zeros_like(pred)
    out[np.unravel_index(np.argmax(pred), pred.shape)] = 1.0
    return out


class Evaluator:
    """Scores reconstructions of one split; ground-truth point sets are cached."""

    def __init__(self, data: ShapeImageDataset, idx, kind: str, eval_cfg: EvalConfig,
                 batch_size: int = 50):
        self.data, self.idx, self.kind, self.cfg = data, list(idx), kind, eval_cfg
        self.batch_size = batch_size
        if not self.idx:
            raise InvalidInputError("evaluation split is empty")
        for i in self.idx:
            if data.records[i]["shape_id"] is None:
                raise InvalidInputError(f"sample {data.records[i]['id']} has no ground-truth shape")
        self.ids = [data.records[i]["id"] for i in self.idx]
        if kind == VOXEL:
            self.gt_vox = data.voxels_for(self.idx).astype(np.float64)
            self.gt_pts = [
                sample_isosurface(v, eval_cfg.threshold, eval_cfg.n_points, eval_cfg.seed).points
                for v in self.gt_vox
            ]
        else:
            self.gt_vox = None
            self.gt_pts = list(data.points_for(self.idx))

    def predictions(self, net: DarecNet) -> np.ndarray:
        out = []
        was = net.training
        net.eval()
        with torch.no_grad():
            for i in range(0, len(self.idx), self.batch_size):
                x = _images(self.data, self.idx[i : i + self.batch_size])
                out.append(net.reconstruct(x).double().numpy())
        net.train(was)
        return np.concatenate(out)

    def score(self, preds: np.ndarray, checkpoint: Optional[str] = None) -> MetricReport:
        cfg = self.cfg
        ious, cds = [], []
        for k, pred in enumerate(preds):
            if self.kind == VOXEL:
                ious.append(voxel_iou(pred, self.gt_vox[k], cfg.threshold))
                pred = _binarized_or_argmax(pred, cfg.threshold)
                pts = sample_isosurface(pred, cfg.threshold, cfg.n_points, cfg.seed).points
            else:
                pts = pred
            cds.append(chamfer_distance(pts, self.gt_pts[k], squared=cfg.squared))
        return MetricReport(ids=list(self.ids), iou=ious if self.kind == VOXEL else None,
                            chamfer=cds, checkpoint=checkpoint)

    def __call__(self, net: DarecNet, checkpoint: Optional[str] = None) -> MetricReport:
        return self.score(self.predictions(net), checkpoint)


def split_indices(data: ShapeImageDataset, split: str):
    """``split`` is ``<domain>-<train|test>``, e.g. ``natural-test``."""
    try:
        domain, part = split.split("-")
        return data.indices(Domain(domain.upper()), part)
    except ValueError as exc:
        raise InvalidInputError(f"bad split {split!r}; expected e.g. 'natural-test'") from exc


def evaluate_checkpoint(ckpt, split: str = "natural-test", data: Optional[ShapeImageDataset] = None,
                        eval_cfg: Optional[EvalConfig] = None, prior_path=None) -> MetricReport:
    """Reconstruct every sample of a split and score it against its ground truth."""
    blob = ck.recon_blob(ckpt)
    net = ck.load_recon(ckpt, prior_path)
    if data is None:
        from .config import from_dict

        data = load_data(from_dict(blob["config"]))
    if eval_cfg is None:
        eval_cfg = EvalConfig(**blob["config"]["eval"]) if blob.get("config") else EvalConfig()
    idx = split_indices(data, split)
    return Evaluator(data, idx, net.kind, eval_cfg)(net, checkpoint=Path(ckpt).name)


# --------------------------------------------------------------------------
# run records


WALL_CLOCK_KEYS = ("wall_clock", "elapsed")


@dataclass
class RunRecord:
    """In-memory view of a run's JSON-lines log."""

    config: dict
    code_hash: str
    manifest_hash: str
    prior_checksum: str
    losses: list = field(default_factory=list)  # {"step", terms...}
    evals: list = field(default_factory=list)  # {"step", "split", "checkpoint", "report"}
    checkpoints: list = field(default_factory=list)
    best: Optional[dict] = None
    wall_clock: float = 0.0
    status: str = "running"

    def comparable(self) -> dict:
        """Everything except wall-clock fields."""
        return {
            "config": self.config,
            "code_hash": self.code_hash,
            "manifest_hash": self.manifest_hash,
            "prior_checksum": self.prior_checksum,
            "losses": self.losses,
            "evals": self.evals,
            "checkpoints": self.checkpoints,
            "best": self.best,
            "status": self.status,
        }

    def final_eval(self, split: str, checkpoint: Optional[str] = None) -> MetricReport:
        rows = [e for e in self.evals if e["split"] == split]
        if checkpoint is not None:
            rows = [e for e in rows if e["checkpoint"] == checkpoint]
        if not rows:
            raise KeyError(f"no {split} evaluation for {checkpoint}")
        return MetricReport.from_dict(rows[-1]["report"])

    def best_eval(self, split: str = "natural-test") -> MetricReport:
        return self.final_eval(split, self.best["checkpoint"])


class RecordWriter:
    """Append-only JSON-lines log mirrored into a RunRecord."""

    def __init__(self, path: Path, record: RunRecord):
        self.path = path
        self.record = record
        self.t0 = time.perf_counter()
        path.write_text("")
        self._write({"event": "start", "config": record.config, "code_hash": record.code_hash,
                     "manifest_hash": record.manifest_hash, "prior_checksum": record.prior_checksum})

    def _write(self, obj):
        obj = dict(obj, elapsed=round(time.perf_counter() - self.t0, 4))
        with open(self.path, "a") as fh:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")

    def loss(self, step: int, terms: dict):
        row = {"step": step, **terms}
        self.record.losses.append(row)
        self._write({"event": "loss", **row})

    def evaluation(self, step: int, split: str, checkpoint: str, report: MetricReport):
        row = {"step": step, "split": split, "checkpoint": checkpoint, "report": report.to_dict()}
        self.record.evals.append(row)
        self._write({"event": "eval", **row})

    def checkpoint(self, step: int, name: str):
        self.record.checkpoints.append({"step": step, "checkpoint": name})
        self._write({"event": "checkpoint", "step": step, "checkpoint": name})

    def finish(self, status: str, **extra):
        self.record.status = status
        self.record.wall_clock = time.perf_counter() - self.t0
        self._write({"event": "end", "status": status, "best": self.record.best,
                     "wall_clock": self.record.wall_clock, **extra})


def read_record(path) -> RunRecord:
    """Rebuild a RunRecord from its JSON-lines file."""
    path = Path(path)
    if path.is_dir():
        path = path / RECORD_FILE
    rec = None
    for line in path.read_text().splitlines():
        ev = json.loads(line)
        kind = ev.pop("event")
        ev.pop("elapsed", None)
        if kind == "start":
            rec = RunRecord(ev["config"], ev["code_hash"], ev["manifest_hash"], ev["prior_checksum"])
        elif kind == "loss":
            rec.losses.append(ev)
        elif kind == "eval":
            rec.evals.append(ev)
        elif kind == "checkpoint":
            rec.checkpoints.append(ev)
        elif kind == "end":
            rec.status = ev["status"]
            rec.best = ev["best"]
            rec.wall_clock = ev["wall_clock"]
    if rec is None:
        raise InvalidInputError(f"{path}: empty run record")
    return rec


# --------------------------------------------------------------------------
# stage 2


def _load_frozen_prior(cfg: ExperimentConfig, prior_ckpt) -> ShapeAutoencoder:
    prior = ck.load_prior(prior_ckpt)
    if not prior.frozen:
        raise ConfigError(f"{prior_ckpt}: stage 2 needs a frozen stage-1 checkpoint")
    if prior.kind != cfg.kind:
        raise ConfigError(f"prior kind {prior.kind!r} does not match config kind {cfg.kind!r}")
    if prior.latent_dim != cfg.prior.latent_dim:
        raise ConfigError(
            f"prior latent dimension {prior.latent_dim} does not match {cfg.prior.latent_dim}"
        )
    return prior


def _round_terms(terms: dict) -> dict:
    return {k: float(v.detach()) for k, v in terms.items()}


def run_stage2(cfg: ExperimentConfig, prior_ckpt, out_dir=None,
               data: Optional[ShapeImageDataset] = None) -> RunRecord:
    """Train the reconstruction network against a frozen prior.

    Mini-batches of rendered images, natural images and shape codes are drawn
    from three independent seeded streams, so switching a loss term off does
    not change the batches the remaining terms see. Evaluations run at step 0,
    every ``eval_every`` steps and at the end; ``best.pt`` is the evaluated
    checkpoint with the lowest held-out RENDERED Chamfer distance.
    """
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = data or load_data(cfg)
    _check_data(cfg, data)
    prior = _load_frozen_prior(cfg, prior_ckpt)
    prior_checksum = prior.frozen_checksum
    s2 = cfg.stage2

    net = DarecNet(prior, cfg.encoder, cfg.disc_width, seed=cfg.seed)
    opt = torch.optim.Adam(net.trainable_parameters(), lr=s2.lr)

    r_train = np.array(data.indices(Domain.RENDERED, "train"))
    n_train = np.array(data.indices(Domain.NATURAL, "train"))
    if len(r_train) == 0:
        raise InvalidInputError("no labeled rendered training samples")
    needs_natural = cfg.switches.use_img or (cfg.switches.use_shape and s2.natural_in_shape)
    if needs_natural and len(n_train) == 0:
        raise InvalidInputError("natural training images are required by the loss switches")
    targets = shape_targets(data, r_train, cfg.kind)
    manifold = net.manifold_codes(targets) if cfg.switches.use_shape else None

    evals = {
        "rendered-test": Evaluator(data, data.indices(Domain.RENDERED, "test"), cfg.kind, cfg.eval),
        "natural-test": Evaluator(data, data.indices(Domain.NATURAL, "test"), cfg.kind, cfg.eval),
    }
    record = RunRecord(cfg.to_dict(), code_hash(), manifest_hash(data), prior_checksum)
    writer = RecordWriter(out / RECORD_FILE, record)
    rng_r = np.random.default_rng([cfg.seed, 1])
    rng_n = np.random.default_rng([cfg.seed, 2])
    rng_s = np.random.default_rng([cfg.seed, 3])
    best = None

    def evaluate(step):
        nonlocal best
        name = f"step{step:06d}.pt" if s2.keep_eval_checkpoints else "latest.pt"
        ck.save_recon(out / name, net, prior_ckpt, cfg.to_dict(), step)
        writer.checkpoint(step, name)
        reports = {split: ev(net, checkpoint=name) for split, ev in evals.items()}
        for split, rep in reports.items():
            writer.evaluation(step, split, name, rep)
        cd = reports["rendered-test"].mean_chamfer
        if best is None or cd < best["rendered_cd"]:
            best = {"step": step, "checkpoint": name, "rendered_cd": cd}
            shutil.copyfile(out / name, out / BEST_FILE)
            record.best = dict(best)
        log.info("step %d rendered CD %.4f natural CD %.4f", step, cd,
                 reports["natural-test"].mean_chamfer)

    net.train()
    evaluate(0)
    try:
        for step in range(1, s2.steps + 1):
            ri = rng_r.choice(len(r_train), s2.batch_size, replace=len(r_train) < s2.batch_size)
            ni = rng_n.choice(len(n_train), s2.batch_size, replace=len(n_train) < s2.batch_size) \
                if len(n_train) else None
            si = rng_s.choice(len(r_train), s2.batch_size, replace=len(r_train) < s2.batch_size)
            x_r = _images(data, r_train[ri])
            x_n = _images(data, n_train[ni]) if needs_natural else None
            e_shape = manifold[si] if manifold is not None else None
            opt.zero_grad()
            total, terms = net.objective(x_r, targets[ri], x_n, e_shape, cfg.weights, cfg.switches,
                                         natural_in_shape=s2.natural_in_shape)
            terms = {"total": total, **terms}
            if not all(torch.isfinite(v) for v in terms.values()):
                diag = {"step": step, **_round_terms(terms)}
                writer.loss(step, _round_terms(terms))
                raise DivergenceError(f"stage-2 loss became non-finite at step {step}", diag)
            total.backward()
            opt.step()
            if step % s2.log_every == 0 or step == s2.steps:
                writer.loss(step, _round_terms(terms))
            if step % s2.eval_every == 0 or step == s2.steps:
                evaluate(step)
    except DivergenceError as exc:
        writer.finish("diverged", diagnostics=exc.diagnostics)
        raise
    prior.verify_frozen()
    if prior.frozen_checksum != prior_checksum:
        raise ChecksumMismatchError("frozen prior changed during stage 2")
    shutil.copyfile(out / record.checkpoints[-1]["checkpoint"], out / FINAL_FILE)
    writer.finish("ok")
    return record


# --------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    label: str
    switches: dict
    seeds: list
    natural_cd: list
    natural_iou: Optional[list]
    rendered_cd: list

    @property
    def mean_cd(self) -> float:
        return float(np.mean(self.natural_cd))

    @property
    def std_cd(self) -> float:
        return float(np.std(self.natural_cd, ddof=1)) if len(self.natural_cd) > 1 else 0.0

    def to_dict(self) -> dict:
        d = {
            "label": self.label,
            "switches": self.switches,
            "seeds": self.seeds,
            "natural_cd": self.natural_cd,
            "natural_iou": self.natural_iou,
            "rendered_cd": self.rendered_cd,
            "mean_cd": self.mean_cd,
            "std_cd": self.std_cd,
        }
        if self.natural_iou:
            d["mean_iou"] = float(np.mean(self.natural_iou))
        return d


def ablation_table(rows, kind: str) -> dict:
    by = {r.label: r for r in rows}
    table = {"kind": kind, "rows": [r.to_dict() for r in rows], "reference_cd": REFERENCE_CD[kind]}
    if {"rec+img", "rec+img+shape"} <= set(by):
        table["strict_full_below_img_observed"] = by["rec+img+shape"].mean_cd < by["rec+img"].mean_cd
    return table


def format_table(table: dict) -> str:
    lines = ["| loss terms | natural CD (mean ± std) | natural IoU | reference CD |",
             "|---|---|---|---|"]
    for r in table["rows"]:
        iou = f"{r['mean_iou']:.3f}" if r.get("mean_iou") is not None else "-"
        ref = table["reference_cd"].get(r["label"], float("nan"))
        lines.append(f"| {r['label']} | {r['mean_cd']:.4f} ± {r['std_cd']:.4f} | {iou} | {ref:.3f} |")
    if "strict_full_below_img_observed" in table:
        lines.append("")
        lines.append("full < img-only observed: " + str(table["strict_full_below_img_observed"]).lower())
    return "\n".join(lines)


def completed_run(cfg: ExperimentConfig, out_dir, prior_checksum: Optional[str] = None) -> Optional[RunRecord]:
    """The record in ``out_dir`` if it finished successfully under exactly ``cfg`` (and prior)."""
    path = Path(out_dir) / RECORD_FILE
    if not path.exists():
        return None
    try:
        rec = read_record(path)
    except (InvalidInputError, ValueError, KeyError):
        return None
    if rec.status != "ok" or rec.config != cfg.to_dict() or rec.code_hash != code_hash():
        return None
    if prior_checksum is not None and rec.prior_checksum != prior_checksum:
        return None
    if not (Path(out_dir) / BEST_FILE).exists():
        return None
    return rec


def run_ablation(cfg: ExperimentConfig, prior_ckpt=None, out_dir=None, rows=ABLATION_ROWS,
                 data: Optional[ShapeImageDataset] = None, reuse: bool = False) -> dict:
    """Every loss-switch row for every seed; reports held-out NATURAL CD at each run's best checkpoint.

    Writes ``ablation.json`` and ``ablation.md`` into the output directory.
    When ``prior_ckpt`` is omitted a prior is trained (or reused) under ``<out>/prior``.
    With ``reuse``, a run directory holding a finished record of the same
    config and code is read back instead of retrained.
    """
    out = Path(out_dir or cfg.out_dir)
    data = data or load_data(cfg)
    if prior_ckpt is None:
        prior_ckpt = run_stage1(cfg, out / "prior", data=data)
    prior_sum = ck.read_prior_blob(prior_ckpt)["checksum"]
    results = []
    for sw in rows:
        nat_cd, nat_iou, ren_cd = [], [], []
        for seed in cfg.ablation.seeds:
            run_cfg = cfg.copy(switches=sw, seed=seed)
            run_dir = out / sw.label / f"seed{seed}"
            rec = completed_run(run_cfg, run_dir, prior_sum) if reuse else None
            if rec is None:
                rec = run_stage2(run_cfg, prior_ckpt, run_dir, data=data)
            nat = rec.best_eval("natural-test")
            nat_cd.append(nat.mean_chamfer)
            if nat.iou is not None:
                nat_iou.append(nat.mean_iou)
            ren_cd.append(rec.best["rendered_cd"])
        results.append(AblationRow(sw.label, {"use_rec": sw.use_rec, "use_img": sw.use_img,
                                              "use_shape": sw.use_shape},
                                   list(cfg.ablation.seeds), nat_cd, nat_iou or None, ren_cd))
    table = ablation_table(results, cfg.kind)
    table["config_hash"] = config_hash(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    (out / "ablation.md").write_text(format_table(table) + "\n")
    return table


__all__ = [
    "ABLATION_ROWS",
    "AblationRow",
    "Evaluator",
    "REFERENCE_CD",
    "RunRecord",
    "ablation_table",
    "code_hash",
    "completed_run",
    "evaluate_checkpoint",
    "format_table",
    "load_data",
    "manifest_hash",
    "read_record",
    "run_ablation",
    "run_stage1",
    "run_stage2",
    "split_indices",
]
