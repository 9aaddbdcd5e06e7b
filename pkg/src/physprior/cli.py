"""Command-line entry point: data generation, training, inference, calibration, selection.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numerical
divergence or failed selection.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np

from . import conformal as cf
from .config import RunConfig
from .errors import DataCorruption, DivergenceError, FormatError, InvalidArgument, SelectionError
from .fields import derive_seed
from .metrics import rel_l2
from .sampler import GuidanceConfig, SigmaSchedule
from .selection import select_model, summary_text
from .tasks import PhysicsPrior, measurement, run_task, scalar_stack, task_spec
from .unified import (CHANNEL_NAMES, generate_dataset, read_dataset, resimulate, unlift_params,
                      write_dataset)

log = logging.getLogger("physprior")

CSV_FIELDS = ("metric", "name", "class", "task", "fraction", "value", "seed", "config_hash")
TASKS = {
    "forward": "forward", "inverse-state": "inverse_state", "infer-params": "infer_params",
    "partial-params": "partial_params", "vector-forward": "vector_forward",
    "vector-inverse": "vector_inverse", "ood-joint": "ood_joint",
}


# --------------------------------------------------------------------------
# helpers


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CSV_FIELDS])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def write_pgm(path, panels, comment: str = "") -> tuple[float, float]:
    """8-bit P5 image of panels side by side, mapped linearly from [lo, hi] to [0, 255].

    NaN entries (unobserved points) are drawn black.  Returns ``(lo, hi)``.
    """
    arrs = [np.asarray(p, dtype=np.float64) for p in panels]
    vals = np.concatenate([a[np.isfinite(a)] for a in arrs])
    lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    gap = np.full((arrs[0].shape[0], 1), np.nan)
    img = np.hstack([x for a in arrs for x in (a, gap)][:-1])
    # row 0 is the lowest y value; images put it at the bottom
    img = img[::-1]
    pix = np.where(np.isfinite(img), np.round(255.0 * (np.nan_to_num(img, nan=lo) - lo) / span),
                   0).astype(np.uint8)
    head = f"P5\n# value = {lo!r} + pixel / 255 * {span!r}\n"
    if comment:
        head += "".join(f"# {line}\n" for line in comment.splitlines())
    head += f"{pix.shape[1]} {pix.shape[0]}\n255\n"
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii") + pix.tobytes())
    return lo, hi


def _pmap(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _config(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    # flags win over the file
    overrides = {
        ("dataset", "investigation"): getattr(args, "investigation", None),
        ("dataset", "n_per_class"): getattr(args, "n_per_class", None),
        ("prior", "checkpoint"): getattr(args, "checkpoint", None),
        ("prior", "steps"): getattr(args, "steps", None),
        ("conformal", "alpha"): getattr(args, "alpha", None),
        ("conformal", "M"): getattr(args, "M", None),
        ("conformal", "n_cal"): getattr(args, "n_cal", None),
        ("selection", "repeats"): getattr(args, "repeats", None),
    }
    for (s, k), v in overrides.items():
        if v is not None:
            cfg.set(s, k, v)
    if getattr(args, "checkpoint", None):
        cfg.set("prior", "kind", "trainable")
    if getattr(args, "pgm_dir", None):
        cfg.set("output", "pgm", True)
        cfg.set("output", "pgm_dir", args.pgm_dir)
    return cfg


def _hash(cfg: RunConfig, args) -> str:
    keep = {k: v for k, v in vars(args).items() if k not in ("func", "jobs", "out", "verbose")}
    return cfg.digest(keep)


def _prior(cfg: RunConfig, ds) -> PhysicsPrior:
    s = cfg["sampler"]
    schedule = SigmaSchedule(s["sigma_min"], s["sigma_max"], s["rho"], s["n_steps"])
    g = cfg["guidance"]
    guidance = None
    if g["mode"] != "auto":
        guidance = GuidanceConfig(g["mode"], g["zeta"], "exact_oracle", g["hard_replace"])
    kw = dict(schedule=schedule, guidance=guidance, sparse_zeta=g["zeta_sparse"],
              full_zeta=g["zeta_full"], hard_replace=g["hard_replace"])
    kind = cfg["prior"]["kind"]
    if kind == "oracle":
        return PhysicsPrior.oracle(ds, **kw)
    if kind == "trainable":
        from .network import load_checkpoint

        path = cfg["prior"]["checkpoint"]
        if not path:
            raise InvalidArgument("a trainable prior needs [prior] checkpoint")
        return PhysicsPrior.from_dataset(ds, load_checkpoint(path), **kw)
    raise InvalidArgument(f"unknown prior kind {kind!r}")


def _instances(ds, cls, count):
    items = ds.of_class(cls.id)
    if count is not None:
        if count < 1:
            raise InvalidArgument("instances must be >= 1")
        items = items[:count]
    if not items:
        raise InvalidArgument(f"no instances of class {cls.name}")
    return items


def _partner(ds, cls, sample):
    """Sample of the other vector layout drawn from the same solve."""
    other = "vector_state_v" if cls.layout == "vector_state_u" else "vector_state_u"
    for c in ds.classes:
        if c.family == cls.family and c.layout == other:
            for s in ds.of_class(c.id):
                if s.seed == sample.seed:
                    return c, s
    raise InvalidArgument(f"no partner component for class {cls.name}")


def _task_inputs(prior, ds, cls, task, sample, fraction, known, reaction):
    """(class, spec, physical truth stack) list for a CLI task name."""
    x = sample.x.data
    if task in ("forward", "inverse_state", "infer_params"):
        return [(cls, task_spec(task, cls, fraction), x)]
    if task == "partial_params":
        return [(cls, task_spec(task, cls, fraction, known), x)]
    if task == "ood_joint":
        u0, uT = resimulate(cls, sample, reaction=reaction) if reaction else (None, None)
        if reaction:
            x = scalar_stack(cls, sample.phi, u0.data[0], uT.data[0])
        return [(cls, task_spec(task, cls, fraction), x)]
    if task == "vector_forward":
        pc, ps = _partner(ds, cls, sample)
        pairs = sorted([(cls, x), (pc, ps.x.data)], key=lambda t: t[0].layout)
        return [(c, task_spec("vector_forward_" + c.layout[-1], c, fraction), xx)
                for c, xx in pairs]
    if task == "vector_inverse":
        return [(cls, task_spec("vector_inverse_" + cls.layout[-1], cls, fraction), x)]
    raise InvalidArgument(f"unknown task {task!r}")


def _channel_name(cls, ch):
    return CHANNEL_NAMES[cls.layout][ch]


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    classes = args.classes.split(",") if args.classes else (
        cfg["dataset"]["classes"].split(",") if cfg["dataset"]["classes"] else None)
    if args.seed is None:
        args.seed = cfg["dataset"]["seed"]
    ds = generate_dataset(cfg["dataset"]["investigation"], cfg["dataset"]["n_per_class"],
                          args.seed, cfg["grid"]["n"], cfg["solver"]["cfl"], args.jobs, classes)
    ds.metadata["run_config_hash"] = _hash(cfg, args)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out} (config {ds.metadata['config_hash']})")
    for c in ds.classes:
        xs = ds.of_class(c.id)
        if not xs:
            continue
        norms = np.array([[np.linalg.norm(s.x.data[ch]) for ch in range(3)] for s in xs])
        print(f"  {c.id} {c.name:22s} n={len(xs):5d} mean channel L2 "
              + " ".join(f"{v:.4g}" for v in norms.mean(axis=0)))
    return 0


def cmd_train(args) -> int:
    from .network import TrainConfig, save_checkpoint, train

    cfg = _config(args)
    ds = read_dataset(args.dataset)
    p = cfg["prior"]
    den = train(ds, TrainConfig(p["steps"], p["batch"], p["lr"], p["p_mean"], p["p_std"],
                                args.seed))
    save_checkpoint(den, args.out)
    w = min(100, max(1, len(den.losses) // 10))
    if den.losses:
        print(f"trained {len(den.losses)} steps, {den.parameter_count()} parameters, "
              f"loss {np.mean(den.losses[:w]):.4f} -> {np.mean(den.losses[-w:]):.4f}")
    return 0


def _infer_one(item, prior, ds, task, fraction, known, reaction, root_seed, h, pgm_dir):
    index, sample = item
    cls = ds.cls(sample.class_id)
    seed = derive_seed(root_seed, index)
    rows, panels = [], []
    for c, spec, x in _task_inputs(prior, ds, cls, task, sample, fraction, known, reaction):
        z = run_task(prior, c, spec, x, seed)
        base = dict(**{"class": c.name}, task=spec.kind, fraction=fraction, seed=seed,
                    config_hash=h)
        if spec.kind in ("infer_params", "partial_params"):
            phi_hat = unlift_params(z[0], c.d_c)
            for k, name in enumerate(c.param_names):
                if name in spec.known:
                    continue
                err = 100.0 * abs(phi_hat[k] - sample.phi[k]) / abs(sample.phi[k])
                rows.append(dict(base, metric="rel_err_pct", name=f"phi_{name}", value=err))
                rows.append(dict(base, metric="estimate", name=f"phi_{name}", value=phi_hat[k]))
        else:
            for ch in spec.targets:
                e = rel_l2(z[ch], x[ch])
                rows.append(dict(base, metric=e.kind, name=_channel_name(c, ch), value=e.value))
        if pgm_dir:
            op = measurement(spec, c, x.shape, seed)
            for ch in spec.targets:
                obs_ch = [o for o in spec.observed if o != 0] or [0]
                seen = np.where(op.masks[obs_ch[0]], x[obs_ch[0]], np.nan)
                path = os.path.join(pgm_dir, f"{c.name}_{spec.kind}_{index:04d}_"
                                             f"{_channel_name(c, ch)}.pgm")
                panels.append((path, (x[ch], seen, z[ch])))
    return rows, panels


def cmd_infer(args) -> int:
    cfg = _config(args)
    task = TASKS.get(args.task)
    if task is None:
        raise InvalidArgument(f"unknown task {args.task!r}")
    ds = read_dataset(args.dataset)
    test = read_dataset(args.test_dataset) if args.test_dataset else ds
    prior = _prior(cfg, ds)
    cls = test.cls(args.cls)
    h = _hash(cfg, args)
    pgm_dir = None
    if cfg["output"]["pgm"]:
        pgm_dir = cfg["output"]["pgm_dir"] or os.path.dirname(os.path.abspath(args.out))
        os.makedirs(pgm_dir, exist_ok=True)
    known = tuple(args.known.split(",")) if args.known else ()
    items = list(enumerate(_instances(test, cls, args.instances)))
    fn = partial(_infer_one, prior=prior, ds=test, task=task, fraction=args.fraction,
                 known=known, reaction=args.reaction, root_seed=args.seed, h=h, pgm_dir=pgm_dir)
    results = _pmap(fn, items, args.jobs)
    rows = [r for rs, _ in results for r in rs]
    for _, panels in results:
        for path, arrs in panels:
            write_pgm(path, arrs, f"truth | observed | predicted\nconfig_hash={h} seed={args.seed}")
    # per-target means
    groups = {}
    for r in rows:
        if r["metric"] in ("rel_l2_pct", "abs_l2", "rel_err_pct"):
            groups.setdefault((r["metric"], r["name"], r["class"], r["task"]), []).append(r["value"])
    for (metric, name, cname, tk), vals in groups.items():
        rows.append({"metric": "mean_" + metric, "name": name, "class": cname, "task": tk,
                     "fraction": args.fraction, "value": float(np.mean(vals)),
                     "seed": args.seed, "config_hash": h})
        print(f"{cname} {tk} {name}: mean {metric} = {np.mean(vals):.4f} over {len(vals)}")
    write_csv(args.out, rows)
    return 0


def _ensemble_one(item, prior, ds, task, fraction, M, root_seed, known=(), reaction=0.0):
    index, sample = item
    cls = ds.cls(sample.class_id)
    seed = derive_seed(root_seed, index)
    out = []
    for c, spec, x in _task_inputs(prior, ds, cls, task, sample, fraction, known, reaction):
        ens = run_task(prior, c, spec, x, seed, M=M)
        for ch in spec.targets:
            scale = float(prior.stats[c.id][1][ch, 0, 0])
            out.append((cf.ensemble_stats(ens[:, ch]), x[ch], scale))
    return seed, out


def _scores(entries, floor_rel, mode):
    scores = []
    for st, z, scale in entries:
        s = cf.nonconformity(z, st, floor_rel * scale)
        scores.append(s.max(keepdims=True) if mode == "instance_max" else s)
    return scores


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    task = TASKS.get(args.task)
    if task is None:
        raise InvalidArgument(f"unknown task {args.task!r}")
    c = cfg["conformal"]
    if c["n_cal"] < 1:
        raise InvalidArgument("n-cal must be >= 1")
    ds = read_dataset(args.dataset)
    cal = read_dataset(args.cal_dataset) if args.cal_dataset else ds
    prior = _prior(cfg, ds)
    cls = cal.cls(args.cls)
    items = list(enumerate(_instances(cal, cls, c["n_cal"])))
    fn = partial(_ensemble_one, prior=prior, ds=cal, task=task, fraction=args.fraction,
                 M=c["M"], root_seed=args.seed)
    results = _pmap(fn, items, args.jobs)
    scores = [s for _, entries in results for s in _scores(entries, c["floor"], c["score"])]
    rec = cf.CalibrationRecord.build(cls.id, task, c["alpha"], scores)
    h = _hash(cfg, args)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(rec.to_text() + f"fraction={args.fraction!r}\nM={c['M']}\n"
                 f"seed={args.seed}\nconfig_hash={h}\n")
    print(f"q_hat={rec.q_hat:.6g} from {rec.n} instances ({rec.n_pool} pooled scores)")
    return 0


def cmd_evaluate_coverage(args) -> int:
    cfg = _config(args)
    with open(args.record, encoding="utf-8") as fh:
        text = fh.read()
    rec = cf.CalibrationRecord.from_text(text)
    kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
    fraction = args.fraction if args.fraction is not None else float(kv.get("fraction", 0.3))
    M = int(kv.get("M", cfg["conformal"]["M"])) if args.M is None else args.M
    ds = read_dataset(args.dataset)
    test = read_dataset(args.test_dataset) if args.test_dataset else ds
    prior = _prior(cfg, ds)
    cls = test.cls(rec.class_id)
    items = list(enumerate(_instances(test, cls, args.instances)))
    fn = partial(_ensemble_one, prior=prior, ds=test, task=rec.task, fraction=fraction, M=M,
                 root_seed=args.seed)
    results = _pmap(fn, items, args.jobs)
    h = _hash(cfg, args)
    floor_rel = cfg["conformal"]["floor"]
    rows, raw_all, cal_all = [], [], []
    for seed, entries in results:
        for st, z, scale in entries:
            floor = floor_rel * scale
            raw = cf.picp(z, *cf.gaussian_interval(st, 1.96, floor))
            cal = cf.picp(z, *cf.conformal_interval(st, rec.q_hat, floor))
            raw_all.append(raw)
            cal_all.append(cal)
            base = {"name": rec.task, "class": cls.name, "task": rec.task, "fraction": fraction,
                    "seed": seed, "config_hash": h}
            rows.append(dict(base, metric="picp_raw", value=raw))
            rows.append(dict(base, metric="picp_calibrated", value=cal))
    for metric, vals in (("mean_picp_raw", raw_all), ("mean_picp_calibrated", cal_all)):
        rows.append({"metric": metric, "name": rec.task, "class": cls.name, "task": rec.task,
                     "fraction": fraction, "value": float(np.mean(vals)), "seed": args.seed,
                     "config_hash": h})
    write_csv(args.out, rows)
    print(f"PICP raw {np.mean(raw_all):.2f}%  calibrated {np.mean(cal_all):.2f}% "
          f"(q_hat={rec.q_hat:.4g}, {len(raw_all)} instances)")
    return 0


def _select_one(item, prior, candidates, fraction, R, root_seed):
    index, sample = item
    seed = derive_seed(root_seed, index)
    res = select_model(prior, candidates, sample.x.data[1], sample.x.data[2], fraction, R, seed)
    return index, sample, seed, res


def cmd_select_model(args) -> int:
    cfg = _config(args)
    ds = read_dataset(args.dataset)
    test = read_dataset(args.test_dataset) if args.test_dataset else ds
    prior = _prior(cfg, ds)
    names = args.candidates.split(",") if args.candidates else [c.name for c in ds.classes]
    candidates = [ds.cls(n) for n in names]
    if len(candidates) < 2:
        log.warning("a single candidate always wins; running anyway")
    truth = test.cls(args.true_class) if args.true_class else candidates[0]
    R = cfg["selection"]["repeats"]
    items = list(enumerate(_instances(test, truth, args.instances)))
    fn = partial(_select_one, prior=prior, candidates=candidates, fraction=args.fraction, R=R,
                 root_seed=args.seed)
    results = _pmap(fn, items, args.jobs)
    h = _hash(cfg, args)
    rows, blocks, hits = [], [], 0
    for index, sample, seed, res in results:
        base = {"class": truth.name, "task": "select_model", "fraction": args.fraction,
                "seed": seed, "config_hash": h}
        for r, row in enumerate(res.repeats):
            for s in row:
                rows.append(dict(base, metric=f"discrepancy_r{r}", name=ds.cls(s.class_id).name,
                                 value=s.error))
        rows.append(dict(base, metric="selected", name=ds.cls(res.selected).name,
                         value=float(res.selected == truth.id)))
        hits += res.selected == truth.id
        blocks.append(f"instance {index} (seed {seed})\n"
                      + summary_text(res, ds.classes, truth.id, sample.phi))
    acc = hits / len(results)
    rows.append({"metric": "accuracy", "name": truth.name, "class": truth.name,
                 "task": "select_model", "fraction": args.fraction, "value": acc,
                 "seed": args.seed, "config_hash": h})
    write_csv(args.out, rows)
    text = "\n".join(blocks) + f"\nmodal-class accuracy {acc:.3f} ({hits}/{len(results)})\n"
    with open(os.path.splitext(args.out)[0] + ".txt", "w", encoding="utf-8") as fh:
        fh.write(f"config_hash={h} seed={args.seed}\n" + text)
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _jobs_default() -> int:
    try:
        return max(1, int(os.environ.get("PADAM_JOBS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="physprior", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", help="INI run configuration")
        # gen-data falls back to [dataset] seed
        sp.add_argument("--seed", type=int, default=0 if dataset else None)
        sp.add_argument("--jobs", type=int, default=_jobs_default())
        sp.add_argument("--out", required=True)
        if dataset:
            sp.add_argument("--dataset", required=True, help="training dataset (PADM)")
            sp.add_argument("--checkpoint", help="trainable denoiser checkpoint")

    g = sub.add_parser("gen-data", help="generate a PADM dataset")
    common(g, dataset=False)
    g.add_argument("--investigation")
    g.add_argument("--n-per-class", type=int)
    g.add_argument("--classes", help="comma-separated subset of class names")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the network denoiser")
    common(t)
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run an inference task over instances")
    common(i)
    i.add_argument("--task", required=True, choices=sorted(TASKS))
    i.add_argument("--class", dest="cls", required=True)
    i.add_argument("--fraction", type=float, default=1.0)
    i.add_argument("--instances", type=int, default=20)
    i.add_argument("--test-dataset", help="instances to evaluate (default: training set)")
    i.add_argument("--known", help="partial-params: comma list of known components")
    i.add_argument("--reaction", type=float, default=0.0,
                   help="ood-joint: regenerate observations with this reaction rate")
    i.add_argument("--pgm-dir", help="write truth/observation/prediction triptychs here")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("calibrate", help="conformal calibration for a class and task")
    common(c)
    c.add_argument("--task", required=True, choices=sorted(TASKS))
    c.add_argument("--class", dest="cls", required=True)
    c.add_argument("--fraction", type=float, default=0.3)
    c.add_argument("--alpha", type=float)
    c.add_argument("--M", type=int)
    c.add_argument("--n-cal", type=int)
    c.add_argument("--cal-dataset", help="calibration instances (default: training set)")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate-coverage", help="raw and calibrated PICP on test instances")
    common(e)
    e.add_argument("--record", required=True, help="calibration record file")
    e.add_argument("--fraction", type=float)
    e.add_argument("--M", type=int)
    e.add_argument("--instances", type=int, default=50)
    e.add_argument("--test-dataset")
    e.set_defaults(func=cmd_evaluate_coverage)

    s = sub.add_parser("select-model", help="infer-and-validate model selection")
    common(s)
    s.add_argument("--candidates", help="comma-separated class names (default: all)")
    s.add_argument("--true-class", help="class whose instances are evaluated")
    s.add_argument("--fraction", type=float, default=0.3)
    s.add_argument("--repeats", type=int)
    s.add_argument("--instances", type=int, default=1)
    s.add_argument("--test-dataset")
    s.set_defaults(func=cmd_select_model)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, DataCorruption, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DivergenceError, SelectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
