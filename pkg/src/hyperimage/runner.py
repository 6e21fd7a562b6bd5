"""Experiment driver: config validation, per-split stage execution, artifact
layout, content-hash manifests and the method comparison table.

Layout under ``<output>/<experiment>/``::

    config.json, data.jsonl          resolved config and dataset description
    <split>/stage1.hpm ...           models, reports, epoch CSVs
    <split>/caches/<id>.hypi         hyper-images
    <split>/predictions_<method>.csv test-set predictions
    <split>/metrics.json             per-method metrics
    summary.csv, summary.json, report.csv
    timing.json                      wall-clock (not hashed)
    MANIFEST.sha256                  written last
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import fixtures, synth
from .datasets import load_manifest, load_model, make_splits, save_model
from .grid import make_geometry, select_distorted_patches
from .imageops import crop_patch_centered, lcn, read_pnm, sample_contour, tamper_contour
from .metrics import (MetricReport, aggregate_splits, classification_report, regression_report,
                      summary_csv, summary_json)
from .net import get_spec, spec_names
from .pipelines import (DatasetProfile, RunReport, TrainConfig, extract_hyper_dataset, load_hyper_cache,
                        predict_patch_average, prepare_end_to_end, train_end_to_end, train_stage1_ranking,
                        train_stage1_regression, train_stage2)

METHODS = ("two-stage", "patch-average", "end-to-end")
MARKER = "RUN_INCOMPLETE"
MANIFEST = "MANIFEST.sha256"
UNHASHED = {MANIFEST, MARKER, "timing.json"}

# -- configuration ----------------------------------------------------------------

# synthetic desk runs keep the full-width stage 2: the quarter-width one narrows to 16
# channels and its ReLUs die on small feature magnitudes for some seeds
_SPECS = {
    ("synthetic", "desk"): {"stage1": "desk-synthetic-stage-1", "stage2": "synthetic-stage-2",
                            "e2e": "desk-synthetic-e2e"},
    ("synthetic", "paper"): {"stage1": "synthetic-stage-1", "stage2": "synthetic-stage-2",
                             "e2e": "tid-shallow-e2e"},
    ("iqa", "desk"): {"stage1": "desk-live-stage-1", "stage2": "desk-live-stage-2",
                      "e2e": "desk-tid-shallow-e2e"},
    ("iqa", "paper"): {"stage1": "live-stage-1", "stage2": "live-stage-2", "e2e": "tid-shallow-e2e"},
    ("forgery", "desk"): {"stage1": "desk-forgery-channel", "rank_head": "desk-forgery-rank-head",
                          "stage2": "desk-forgery-stage-2", "e2e": "desk-forgery-e2e"},
    ("forgery", "paper"): {"stage1": "forgery-channel", "rank_head": "forgery-rank-head",
                           "stage2": "forgery-stage-2", "e2e": "forgery-e2e"},
}

_GRIDS = {
    ("synthetic", "desk"): dict(max_h=128, max_w=128, sz=32, n_py=10, n_px=10),
    ("synthetic", "paper"): dict(max_h=128, max_w=128, sz=32, n_py=10, n_px=10),
    ("iqa", "desk"): dict(max_h=128, max_w=128, sz=32, n_py=16, n_px=16),
    ("iqa", "paper"): dict(max_h=384, max_w=512, sz=32, n_py=24, n_px=23),
    ("forgery", "desk"): dict(max_h=64, max_w=64, sz=16, n_py=8, n_px=8),
    ("forgery", "paper"): dict(max_h=256, max_w=384, sz=64, n_py=15, n_px=15),
}

# desk budgets keep acceptance runs within minutes on one core
_TRAIN = {
    "desk": {"stage1": dict(epochs=10, patience=4, batch_size=128),
             "stage2": dict(epochs=60, patience=20, batch_size=16),
             "e2e": dict(epochs=8, patience=4, batch_size=16)},
    "paper": {"stage1": dict(epochs=80, patience=20, batch_size=128),
              "stage2": dict(epochs=200, patience=40, batch_size=16),
              "e2e": dict(epochs=80, patience=20, batch_size=16)},
}

_FRACTIONS = {"synthetic": [0.6, 0.2, 0.2], "iqa": [0.6, 0.2, 0.2], "forgery": [2 / 3, 1 / 6, 1 / 6]}


def schema() -> dict:
    return json.loads(resources.files("hyperimage").joinpath("experiment.schema.json").read_text())


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve_config(raw: dict, profile: str | None = None, seed: int | None = None,
                   out: str | None = None) -> dict:
    """Validate against the schema, fill profile defaults, check spec ids."""
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config: {e.message}") from None
    cfg = copy.deepcopy(raw)
    if profile is not None:
        cfg["profile"] = profile
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["output"] = out
    prof = cfg.setdefault("profile", "desk")
    ds = cfg["dataset"]
    cfg.setdefault("seed", 0)
    cfg.setdefault("output", "output")
    cfg["specs"] = {**_SPECS[(ds, prof)], **cfg.get("specs", {})}
    cfg["grid"] = {**_GRIDS[(ds, prof)], **cfg.get("grid", {})}
    cfg["train"] = _merge(_TRAIN[prof], cfg.get("train", {}))
    cfg["splits"] = {"fractions": _FRACTIONS[ds], "n_splits": 1, "seed": cfg["seed"], **cfg.get("splits", {})}
    cfg["baselines"] = {"patch_average": ds != "forgery", "end_to_end": True, **cfg.get("baselines", {})}
    cfg.setdefault("statistic", "mean")
    cfg.setdefault("generator", {})
    cfg.setdefault("stage1_data", {})
    known = set(spec_names())
    for role, sid in cfg["specs"].items():
        if sid not in known:
            raise ConfigError(f"config: unknown network spec id {sid!r} for {role}")
    for block in cfg["train"].values():
        try:
            TrainConfig(**block)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config: {e}") from None
    return cfg


def load_config(path, **overrides) -> dict:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    return resolve_config(raw, **overrides)


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def train_config(cfg: dict, role: str, split: int, **extra) -> TrainConfig:
    code = {"stage1": 1, "stage2": 2, "e2e": 3}[role]
    block = {**cfg["train"][role], **extra}
    block.setdefault("seed", _derived_seed(cfg["seed"], split, code))
    return TrainConfig(spec=cfg["specs"][role], **block)


# -- datasets ----------------------------------------------------------------------

@dataclass(frozen=True)
class Item:
    id: str
    group: str
    label: float


class Dataset:
    """Images addressed by id with labels and grouping keys."""
    kind = ""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.items: list[Item] = []

    def image(self, id_: str) -> np.ndarray:
        raise NotImplementedError

    def images(self, ids) -> list[np.ndarray]:
        return [self.image(i) for i in ids]

    def labels(self, ids) -> np.ndarray:
        lookup = self.label_map
        return np.array([lookup[i] for i in ids], dtype=np.float64)

    @cached_property
    def label_map(self) -> dict:
        return {it.id: it.label for it in self.items}

    def describe(self) -> list[dict]:
        return [{"id": it.id, "group": it.group, "label": it.label} for it in self.items]


class SyntheticData(Dataset):
    kind = "synthetic"

    def __init__(self, cfg):
        super().__init__(cfg)
        gen = cfg["generator"]
        self.samples = synth.generate_dataset(gen.get("seed", cfg["seed"]), gen.get("count", 3000))
        self.by_id = {f"s{i:05d}": s for i, s in enumerate(self.samples)}
        self.items = [Item(k, k, s.score) for k, s in self.by_id.items()]

    def image(self, id_):
        return self.by_id[id_].image

    def describe(self):
        return [{"id": k, **s.metadata()} for k, s in self.by_id.items()]


class IqaData(Dataset):
    kind = "iqa"

    def __init__(self, cfg):
        super().__init__(cfg)
        gen = cfg["generator"]
        self.refs, self.dists, self.extra = {}, {}, {}
        if "manifest" in cfg:
            for r in load_manifest(cfg["manifest"], "iqa", cfg.get("score_range", "dmos")):
                self.refs[r.id], self.dists[r.id] = r.ref_path, r.dist_path
                self.items.append(Item(r.id, r.group, r.score))
        else:
            for im in fixtures.iqa_fixture(gen.get("seed", cfg["seed"]), gen.get("n_refs", 5)):
                self.refs[im.id], self.dists[im.id] = im.reference, im.distorted
                self.extra[im.id] = im
                self.items.append(Item(im.id, im.group, im.score))

    @staticmethod
    def _load(x):
        return x if isinstance(x, np.ndarray) else read_pnm(x)

    def image(self, id_):
        return self._load(self.dists[id_])

    def reference(self, id_):
        return self._load(self.refs[id_])

    def is_pristine(self, id_) -> bool:
        a, b = self.refs[id_], self.dists[id_]
        return a is b if isinstance(a, np.ndarray) else Path(a) == Path(b)


class ForgeryData(Dataset):
    kind = "forgery"

    def __init__(self, cfg):
        super().__init__(cfg)
        gen = cfg["generator"]
        self.paths, self.arrays, self.boxes = {}, {}, {}
        self.partner: dict[str, str] = {}
        if "manifest" in cfg:
            recs = load_manifest(cfg["manifest"], "forgery")
            for r in recs:
                self.paths[r.id] = r.path
                self.items.append(Item(r.id, r.group, float(r.label)))
            by_pair: dict[str, dict] = {}
            for r in recs:
                if r.pair_id:
                    by_pair.setdefault(r.pair_id, {})[r.label] = r.id
            for p in by_pair.values():
                self.partner[p[0]] = p[1]
        else:
            for i, p in enumerate(fixtures.forgery_corpus(gen.get("seed", cfg["seed"]),
                                                           gen.get("n_pairs", 1000))):
                a, t, g = f"a{i:05d}", f"t{i:05d}", f"p{i:05d}"
                self.arrays[a], self.arrays[t] = p.authentic, p.tampered
                self.items += [Item(a, g, 1.0), Item(t, g, 0.0)]
                self.partner[t] = a
                self.boxes[t] = p.box

    def image(self, id_):
        return self.arrays[id_] if id_ in self.arrays else read_pnm(self.paths[id_])


def load_dataset(cfg: dict) -> Dataset:
    return {"synthetic": SyntheticData, "iqa": IqaData, "forgery": ForgeryData}[cfg["dataset"]](cfg)


def profile_of(cfg: dict) -> DatasetProfile:
    g = cfg["grid"]
    ds = cfg["dataset"]
    channels = 3 if ds == "forgery" else 1
    return DatasetProfile(ds, g["max_h"], g["max_w"], g["sz"], g["n_py"], g["n_px"], channels,
                          "lcn" if ds == "iqa" else "none")


# -- stage-1 training data ----------------------------------------------------------

def synthetic_crops(data: SyntheticData, ids, profile: DatasetProfile, rng, with_artifact: int = 8,
                    empty: int = 4):
    """Grid crops labelled by crop_label: some holding artifact centres, some empty."""
    geo = make_geometry(128, 128, profile.sz, profile.n_py, profile.n_px)
    origins = geo.origins()
    xs, ys = [], []
    for i in ids:
        s = data.by_id[i]
        lab = np.array([synth.crop_label(s, o, profile.sz) for o in origins])
        full, none = np.flatnonzero(lab < synth.MAX_SCORE), np.flatnonzero(lab >= synth.MAX_SCORE)
        pick = list(rng.choice(full, min(with_artifact, full.size), replace=False))
        pick += list(rng.choice(none, min(empty, none.size), replace=False))
        for k in sorted(int(p) for p in pick):
            r, c = origins[k]
            xs.append(s.image[r:r + profile.sz, c:c + profile.sz, None])
            ys.append(lab[k])
    return np.array(xs, dtype=np.float32), np.array(ys)


def iqa_patches(data: IqaData, ids, sz: int, tau: float, rng, selection_log: list | None = None):
    """Selected distorted patches (image score) and reference patches (reference score)."""
    xs, ys = [], []
    ref_score = {}
    for it in data.items:
        if data.is_pristine(it.id):
            ref_score[it.group] = it.label
    for i in ids:
        if data.is_pristine(i):
            continue
        ref, dist = data.reference(i), data.image(i)
        h, w = dist.shape[:2]
        geo = make_geometry(h, w, sz, max(1, h // sz), max(1, w // sz))
        sel = select_distorted_patches(ref, dist, geo, tau, rng)
        if selection_log is not None:
            selection_log.append({"id": i, "selected": sel.distorted, "fallback": sel.fallback})
        rl, dl = lcn(ref[..., None] if ref.ndim == 2 else ref), lcn(dist[..., None] if dist.ndim == 2 else dist)
        origins = geo.origins()
        group = next(it.group for it in data.items if it.id == i)
        for k in sel.distorted:
            r, c = origins[k]
            xs.append(dl[r:r + sz, c:c + sz])
            ys.append(data.label_map[i])
        for k in sel.reference:
            r, c = origins[k]
            xs.append(rl[r:r + sz, c:c + sz])
            ys.append(ref_score.get(group, 0.0))
    return np.array(xs, dtype=np.float32), np.array(ys)


def forgery_pairs(data: ForgeryData, ids, sz: int, k: int, rng):
    """Contour-sampled (authentic, tampered) patch pairs in random order."""
    a_list, b_list, y = [], [], []
    tampered = [i for i in ids if i in data.partner]
    for t in tampered:
        auth, tamp = data.image(data.partner[t]), data.image(t)
        contours = [c for c in tamper_contour(auth, tamp) if len(c) >= k]
        if not contours:
            continue
        contour = max(contours, key=len)
        for p in sample_contour(contour, k):
            pa, pt = crop_patch_centered(auth, p, sz), crop_patch_centered(tamp, p, sz)
            if rng.random() < 0.5:
                a_list.append(pa), b_list.append(pt), y.append(1.0)
            else:
                a_list.append(pt), b_list.append(pa), y.append(-1.0)
    return (np.array(a_list, dtype=np.float32), np.array(b_list, dtype=np.float32),
            np.array(y, dtype=np.float64))


# -- split execution ----------------------------------------------------------------

class SplitRun:
    """Stages for one split; each reads its inputs from and writes to ``dir``."""

    def __init__(self, cfg: dict, data: Dataset, plan, root: Path):
        self.cfg, self.data, self.plan = cfg, data, plan
        self.dir = root / str(plan.index)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.profile = profile_of(cfg)
        self.timing: dict[str, float] = {}

    @property
    def task(self) -> str:
        return "classification" if self.data.kind == "forgery" else "regression"

    def _rng(self, code: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.cfg["seed"]), self.plan.index, code]))

    def _write(self, name: str, text: str):
        path = self.dir / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)

    def _save_report(self, stem: str, report: RunReport):
        self._write(f"{stem}_report.json", report.to_json())
        self._write(f"{stem}_epochs.csv", report.epochs_csv())
        self.timing[stem] = report.wall_clock

    # stage 1 -------------------------------------------------------------------
    def train_stage1(self):
        if self.data.kind == "forgery":
            return self.train_rank()
        cfg, sd = self.cfg, self.cfg["stage1_data"]
        rng = self._rng(11)
        log: list = []
        if self.data.kind == "synthetic":
            make = lambda ids: synthetic_crops(self.data, ids, self.profile, rng,
                                               sd.get("with_artifact", 8), sd.get("empty", 4))
        else:
            make = lambda ids: iqa_patches(self.data, ids, self.profile.sz, sd.get("tau", 0.95), rng, log)
        x, y = make(self.plan.train)
        xv, yv = make(self.plan.val)
        model, report = train_stage1_regression(x, y, xv, yv, train_config(cfg, "stage1", self.plan.index))
        report.extra["n_train_patches"] = int(len(x))
        if log:
            report.extra["selection"] = log
        save_model(model, self.dir / "stage1.hpm")
        self._save_report("stage1", report)
        return report

    def train_rank(self):
        cfg, sd = self.cfg, self.cfg["stage1_data"]
        rng = self._rng(12)
        k = sd.get("contour_points", 15)
        a, b, y = forgery_pairs(self.data, self.plan.train, self.profile.sz, k, rng)
        va, vb, vy = forgery_pairs(self.data, self.plan.val, self.profile.sz, k, rng)
        mean = np.concatenate([a, b]).reshape(-1, a.shape[-1]).mean(axis=0).astype(np.float64)
        tc = train_config(cfg, "stage1", self.plan.index, augment=True)
        model, report = train_stage1_ranking(a, b, y, va, vb, vy, tc, cfg["specs"]["rank_head"],
                                             meta={"input_mean": mean})
        ta, tb, ty = forgery_pairs(self.data, self.plan.test, self.profile.sz, k, rng)
        report.test_metrics["margin_rate"] = model.margin_rate(ta, tb, ty, tc.delta)
        report.extra["n_train_pairs"] = int(len(y))
        save_model(model.channel, self.dir / "stage1.hpm")
        save_model(model.head, self.dir / "rank_head.hpm")
        self._save_report("stage1", report)
        return report

    # extraction and stage 2 ---------------------------------------------------------
    def all_ids(self):
        return list(self.plan.train) + list(self.plan.val) + list(self.plan.test)

    def extract(self):
        stage1 = load_model(self.dir / "stage1.hpm")
        ids = self.all_ids()
        spec2 = get_spec(self.cfg["specs"]["stage2"]).with_input(
            (self.profile.n_py, self.profile.n_px, stage1.feature_dim))
        _, avg = extract_hyper_dataset(self.data.images(ids), stage1, self.profile, self.dir / "caches",
                                       ids, stage2_spec=spec2, with_patch_average=True)
        if self.task == "regression" and self.cfg["baselines"]["patch_average"]:
            n_test = len(self.plan.test)
            self._predictions("patch-average", list(self.plan.test), avg[len(avg) - n_test:])

    def train_stage2(self):
        caches = self.dir / "caches"
        h, hv = load_hyper_cache(caches, self.plan.train), load_hyper_cache(caches, self.plan.val)
        y, yv = self.data.labels(self.plan.train), self.data.labels(self.plan.val)
        tc = train_config(self.cfg, "stage2", self.plan.index, class_weighting=self.task == "classification")
        model, report = train_stage2(h, y, hv, yv, tc)
        save_model(model, self.dir / "stage2.hpm")
        self._save_report("stage2", report)
        test = list(self.plan.test)
        self._predictions("two-stage", test, model.predict(load_hyper_cache(caches, test))[:, 0])
        return report

    def baseline_avg(self):
        """Patch-averaging predictions (written during extraction; recomputed here if absent)."""
        if (self.dir / "predictions_patch-average.csv").exists():
            return
        stage1 = load_model(self.dir / "stage1.hpm")
        test = list(self.plan.test)
        preds = [predict_patch_average(img, stage1, self.profile) for img in self.data.images(test)]
        self._predictions("patch-average", test, np.array(preds))

    def baseline_e2e(self):
        tc = train_config(self.cfg, "e2e", self.plan.index, class_weighting=self.task == "classification",
                          augment=self.task == "classification")
        d = self.data
        model, report = train_end_to_end(d.images(self.plan.train), d.labels(self.plan.train),
                                         d.images(self.plan.val), d.labels(self.plan.val), tc)
        save_model(model, self.dir / "e2e.hpm")
        self._save_report("e2e", report)
        test = list(self.plan.test)
        self._predictions("end-to-end", test, model.predict(prepare_end_to_end(d.images(test), model.spec))[:, 0])
        return report

    def _predictions(self, method: str, ids, preds):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "truth", "prediction"])
        for i, t, p in zip(ids, self.data.labels(ids), preds):
            w.writerow([i, repr(float(t)), repr(float(p))])
        self._write(f"predictions_{method}.csv", buf.getvalue())

    def evaluate(self) -> dict:
        out = {}
        for method in METHODS:
            path = self.dir / f"predictions_{method}.csv"
            if not path.exists():
                continue
            with open(path, newline="") as f:
                rows = list(csv.DictReader(f))
            truth = np.array([float(r["truth"]) for r in rows])
            pred = np.array([float(r["prediction"]) for r in rows])
            out[method] = _metrics(self.task, pred, truth, self.plan.index)
        extra = {}
        rep1 = self.dir / "stage1_report.json"
        if rep1.exists():
            r1 = json.loads(rep1.read_text())
            extra.update(r1.get("test_metrics", {}))
        if self.data.kind == "forgery" and self.data.boxes:
            extra["contour_recovery"] = contour_recovery(self.data, self.plan.test)
        self._write("metrics.json", json.dumps({"methods": out, "extra": extra}, sort_keys=True, indent=2))
        return out

    def run_all(self):
        self.train_stage1()
        self.extract()
        self.train_stage2()
        if self.cfg["baselines"]["patch_average"] and self.task == "regression":
            self.baseline_avg()
        if self.cfg["baselines"]["end_to_end"]:
            self.baseline_e2e()
        self.evaluate()
        return self.timing


def _metrics(task: str, pred, truth, split: int) -> dict:
    if task == "classification":
        return classification_report(pred, truth.astype(int), split).__dict__
    try:
        return regression_report(pred, truth, split).__dict__
    except ValueError as e:  # constant predictions leave correlations undefined
        return {"n": int(len(truth)), "split": split, "undefined": str(e)}


def contour_recovery(data: ForgeryData, ids, iou: float = 0.5) -> float:
    hits = total = 0
    for t in ids:
        if t not in data.boxes:
            continue
        total += 1
        cs = tamper_contour(data.image(data.partner[t]), data.image(t))
        best = max((fixtures.box_iou(fixtures.contour_box(c), data.boxes[t]) for c in cs), default=0.0)
        hits += best >= iou
    return hits / total if total else float("nan")


# -- whole runs -----------------------------------------------------------------------

def experiment_dir(cfg: dict) -> Path:
    return Path(cfg["output"]) / cfg["experiment"]


def prepare(cfg: dict):
    data = load_dataset(cfg)
    sp = cfg["splits"]
    plans = make_splits(data.items, tuple(sp["fractions"]), sp["n_splits"], sp["seed"])
    return data, plans


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2), encoding="utf-8")


def _split_worker(args):
    cfg, index = args
    data, plans = prepare(cfg)
    return SplitRun(cfg, data, plans[index], experiment_dir(cfg)).run_all()


def run(cfg: dict, jobs: int = 1) -> int:
    """Full experiment; returns 0 on success. A failure leaves RUN_INCOMPLETE behind."""
    root = experiment_dir(cfg)
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST).unlink(missing_ok=True)
    (root / MARKER).write_text("run started; no manifest was written\n")
    # the output location is not part of the experiment; keeps hashes location-independent
    _write_json(root / "config.json", {k: v for k, v in cfg.items() if k != "output"})
    data, plans = prepare(cfg)
    (root / "data.jsonl").write_text("".join(json.dumps(d, sort_keys=True) + "\n" for d in data.describe()))
    if jobs > 1 and len(plans) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            timings = list(pool.map(_split_worker, [(cfg, p.index) for p in plans]))
    else:
        timings = [SplitRun(cfg, data, p, root).run_all() for p in plans]
    write_summary(root, cfg.get("statistic", "mean"))
    _write_json(root / "timing.json", {str(i): t for i, t in enumerate(timings)})
    (root / MARKER).unlink()
    write_manifest(root)
    return 0


def split_dirs(root: Path) -> list[Path]:
    return sorted((p for p in Path(root).iterdir() if p.is_dir() and p.name.isdigit()), key=lambda p: int(p.name))


def collect_reports(root: Path) -> dict[str, list[MetricReport]]:
    out: dict[str, list[MetricReport]] = {}
    for d in split_dirs(root):
        path = d / "metrics.json"
        if not path.exists():
            continue
        for method, m in json.loads(path.read_text())["methods"].items():
            if "undefined" in m:
                continue
            out.setdefault(method, []).append(MetricReport(**m))
    return out


def write_summary(root: Path, statistic: str = "mean"):
    reports = collect_reports(root)
    rows = []
    for method in METHODS:
        if method in reports:
            body = summary_csv(reports[method]).splitlines()
            rows += [f"{method},{line}" for line in body[1:]]
    (root / "summary.csv").write_text("method,metric,statistic,value,std,min,max,n_splits\n"
                                      + "".join(r + "\n" for r in rows))
    (root / "summary.json").write_text(json.dumps(
        {m: json.loads(summary_json(r)) for m, r in reports.items()}, sort_keys=True, indent=2))
    (root / "report.csv").write_text(emit_report(root, statistic))


REGRESSION_COLUMNS = ("method", "statistic", "srocc", "plcc", "n_splits")
CLASSIFICATION_COLUMNS = ("method", "statistic", "accuracy", "n_splits")


def emit_report(root, statistic: str = "mean") -> str:
    """One row per method in fixed order; absent methods are marked, not dropped.

    Columns: method, statistic, srocc, plcc, n_splits for regression runs;
    method, statistic, accuracy, n_splits for classification runs.
    """
    reports = collect_reports(Path(root))
    classification = any(r.accuracy is not None for rs in reports.values() for r in rs)
    cols = CLASSIFICATION_COLUMNS if classification else REGRESSION_COLUMNS
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for method in METHODS:
        if method not in reports:
            w.writerow([method, statistic] + ["absent"] * (len(cols) - 2))
            continue
        agg = aggregate_splits(reports[method], statistic)
        metric_cols = cols[2:-1]
        vals = [repr(agg[m]["value"]) if m in agg else "absent" for m in metric_cols]
        n = max((agg[m]["n_splits"] for m in metric_cols if m in agg), default=0)
        w.writerow([method, statistic, *vals, n])
    return buf.getvalue()


def file_hashes(root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file() and p.name not in UNHASHED:
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def write_manifest(root: Path):
    lines = [f"{h}  {name}\n" for name, h in file_hashes(root).items()]
    tmp = Path(root) / (MANIFEST + ".tmp")
    tmp.write_text("".join(lines))
    os.replace(tmp, Path(root) / MANIFEST)
