"""Command-line front end.

Every subcommand validates the whole configuration before touching any
file, writes its outputs atomically and leaves ``<output>.manifest.json``
next to its main output. Failures print a JSON error object on stderr and
exit with 2 (configuration), 3 (data) or 4 (numerics).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION, __version__
from . import dataio, hierarchy, itq, lbt, metrics, mjpf, ocsvm, simulate, swdbn, tcp
from .config import RunConfig
from .errors import ConfigError, DataError, FormatError, NormalcyError, ValidationError

PAIR_HEADER = ("x", "y", "vx", "vy", "nx", "ny", "nvx", "nvy")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs, outputs) -> None:
    manifest = {
        "command": command,
        "config": cfg.resolved(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"normalcy": __version__, "format": FORMAT_VERSION,
                     "numpy": np.__version__, "python": platform.python_version()},
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in outputs],
    }
    dataio.atomic_write(f"{out}.manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"not valid JSON: {e}", str(path)) from None


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


# ---------------------------------------------------------------------------
# subcommands; each returns (inputs, outputs)


def cmd_simulate(a, cfg: RunConfig):
    if a.regimes:
        names = [n.strip() for n in a.regimes.split(",") if n.strip()]
        cur, nxt, lab = simulate.simulate_regimes(names, a.n, seed=cfg.seed)
        rows = [[*c, *n, int(l)] for c, n, l in zip(cur, nxt, lab)]
        dataio.write_table(a.out, PAIR_HEADER + ("regime",), rows)
        return [], [a.out]
    if a.spec is None:
        raise ConfigError("simulate needs --spec or --regimes")
    spec = simulate.ScenarioSpec.from_json(a.spec)
    over = {k: v for k, v in (("laps", cfg.simulate.laps), ("seed", cfg.simulate.seed))
            if v is not None}
    if over:
        spec = simulate.ScenarioSpec.from_dict({**spec.to_dict(), **over})
    t, xy, labels = simulate.simulate(spec)
    labels_path = Path(a.labels) if a.labels else _sibling(Path(a.out), ".labels.csv")
    dataio.write_trajectory(a.out, t, xy)
    dataio.write_labels(labels_path, labels)
    return [a.spec], [a.out, labels_path]


def cmd_lbt_extract(a, cfg):
    tracklets = dataio.read_tracklets(a.tracklets, cfg.lbt.L, strict=not a.lenient)
    if not tracklets:
        raise ValidationError("no tracklets", a.tracklets)
    X, q = lbt.extract(tracklets, cfg.lbt, a.frames)
    frames = X.reshape(len(X), cfg.lbt.rows, cfg.lbt.cols, -1)
    dataio.write_feature_maps(a.out, frames)
    side = _sibling(Path(a.out), ".lbt.json")
    dataio.atomic_write(side, lbt.sidecar_json(cfg.lbt, q, len(X)))
    return [a.tracklets], [a.out, side]


def _descriptors(paths) -> np.ndarray:
    return np.vstack([np.stack([f.reshape(-1) for f in dataio.read_feature_maps(p)])
                      for p in paths]).astype(np.float64)


def cmd_lbt_train(a, cfg):
    X = _descriptors(a.inputs)
    X = X[X.any(axis=1)]  # frames without any tracklet carry no motion evidence
    model = ocsvm.train(X, cfg.ocsvm)
    dataio.atomic_write(a.out, model.to_json())
    return a.inputs, [a.out]


def cmd_lbt_score(a, cfg):
    model = ocsvm.OcSvmModel.from_json(Path(a.model).read_text(encoding="utf-8"))
    X = _descriptors([a.input])
    d = model.decision_function(X)
    dataio.write_table(a.out, ("frame", "decision", "abnormality"),
                       [(i, float(v), float(-v)) for i, v in enumerate(d)])
    return [a.model, a.input], [a.out]


def cmd_itq_fit(a, cfg):
    frames = [f for p in a.inputs for f in dataio.read_feature_maps(p)]
    X = np.vstack([f.reshape(-1, f.shape[-1]) for f in frames]).astype(np.float64)
    s = cfg.itq
    model = itq.fit(X, s.k, s.iters, s.seed, s.init, s.max_vectors)
    dataio.atomic_write(a.out, model.to_json())
    return a.inputs, [a.out]


def _load_itq(path) -> itq.ItqModel:
    return itq.ItqModel.from_dict(_read_json(path))


def cmd_itq_encode(a, cfg):
    model = _load_itq(a.model)
    lines = []
    for f in dataio.read_feature_maps(a.input):
        codes = itq.codes_to_int(itq.encode(model, f.astype(np.float64)))
        lines.append(itq.format_code_grid(codes, model.k))
    header = f"# k={model.k}\n"
    dataio.atomic_write(a.out, header + "".join(line + "\n" for line in lines))
    return [a.model, a.input], [a.out]


def read_codes(path) -> tuple[np.ndarray, int]:
    """Code-grid text file: optional ``# k=N`` header then one grid line per frame."""
    k = None
    grids = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("k="):
                    k = int(line[1:].strip()[2:])
                continue
            try:
                grids.append(itq.parse_code_grid(line))
            except DataError as e:
                raise DataError(str(e), f"{path}:{n}") from None
    if not grids:
        raise ValidationError("no code grids", str(path))
    if len({g.shape for g in grids}) != 1:
        raise ValidationError("code grids change shape", str(path))
    return np.stack(grids), k


def cmd_tcp(a, cfg):
    codes, k = read_codes(a.codes)
    k = k if k is not None else cfg.itq.k
    s = cfg.tcp
    blocks, raw = tcp.tcp_maps(codes, s.blocks(), 1 << k, s.support)
    if not blocks:
        raise ValidationError(f"video has {len(codes)} frames, shorter than one block ({s.length})")
    maps = tcp.tcp_map(raw, s.threshold)
    maps_path = Path(a.maps) if a.maps else _sibling(Path(a.out), ".maps.nvm1")
    dataio.write_table(a.out, ("frame", "value", "block", "start"),
                       [(b.middle, float(m.max()), i, b.start) for i, (b, m) in
                        enumerate(zip(blocks, maps))])
    dataio.write_scoremap_seq(maps_path, maps)
    return [a.codes], [a.out, maps_path]


def cmd_fuse(a, cfg):
    maps = np.stack(list(dataio.read_scoremap_seq(a.tcp_maps)))
    flows = [f.magnitude() for f in dataio.read_flowmap_seq(a.flow)]
    s = cfg.tcp
    n_frames = len(flows) + 1
    blocks = tcp.build_blocks(n_frames, s.blocks())
    if len(blocks) != len(maps):
        raise ValidationError(f"{len(maps)} TCP maps but {len(blocks)} blocks from "
                              f"{len(flows)} flow fields")
    rows, cols = maps.shape[1:]
    energy = tcp.block_flow(flows, blocks, rows, cols)
    energy = metrics.normalize_signal(energy) if energy.max() > 0 else energy
    fused = np.stack([tcp.motion_mask(tcp.fuse(m, e, s.fusion()), e)
                      for m, e in zip(maps, energy)])
    dataio.write_scoremap_seq(a.out, fused)
    return [a.tcp_maps, a.flow], [a.out]


def cmd_sl_train(a, cfg):
    _, xy = dataio.load_trajectory(a.input)
    model = swdbn.train_shared_level(xy, cfg.swdbn)
    dataio.atomic_write(a.out, model.to_json())
    return [a.input], [a.out]


def cmd_mjpf_run(a, cfg):
    model = swdbn.SharedLevelModel.from_dict(_read_json(a.model))
    _, xy = dataio.load_trajectory(a.input)
    sig = mjpf.run(xy, model, cfg.mjpf)
    dataio.write_table(a.out, ("k", "Y", "superstate_id"),
                       [(k, float(y), int(s)) for k, (y, s) in
                        enumerate(zip(sig.values, sig.superstates))])
    return [a.model, a.input], [a.out]


def read_pairs(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    table = dataio.read_table(path)
    missing = [c for c in PAIR_HEADER if c not in table]
    if missing:
        raise FormatError(f"missing columns {missing}", str(path))
    cur = np.column_stack([table[c] for c in PAIR_HEADER[:4]])
    nxt = np.column_stack([table[c] for c in PAIR_HEADER[4:]])
    lab = table["regime"].astype(np.int64) if "regime" in table else None
    return cur, nxt, lab


def cmd_hier_build(a, cfg):
    cur, nxt, lab = read_pairs(a.input)
    if lab is None:
        raise ValidationError("corpus needs a 'regime' column to pick the seed subset", a.input)
    model = hierarchy.build(cur, nxt, np.flatnonzero(lab == a.seed_regime), cfg.hierarchy)
    out = Path(a.out)
    d = model.to_dict()
    level_paths = []
    for i, lv in enumerate(d["levels"]):
        p = _sibling(out, f".level{i}.json")
        dataio.atomic_write(p, json.dumps(lv, sort_keys=True) + "\n")
        level_paths.append(p)
    d["levels"] = [{"file": p.name} for p in level_paths]
    dataio.atomic_write(out, json.dumps(d, indent=2, sort_keys=True) + "\n")
    return [a.input], [out, *level_paths]


def load_hierarchy(path) -> hierarchy.HierarchyModel:
    path = Path(path)
    d = _read_json(path)
    levels = []
    for ref in d.get("levels", []):
        if "file" in ref:
            levels.append(_read_json(path.parent / ref["file"]))
        else:
            levels.append(ref)
    d["levels"] = levels
    return hierarchy.HierarchyModel.from_dict(d)


def cmd_hier_eval(a, cfg):
    model = load_hierarchy(a.model)
    cur, nxt, _ = read_pairs(a.input)
    ev = hierarchy.evaluate(model, cur, nxt)
    dataio.write_table(a.out, ("index", "Y", "level", "abnormal"),
                       [(i, float(y), int(l), int(b)) for i, (y, l, b) in
                        enumerate(zip(ev.y, ev.level, ev.abnormal))])
    return [a.model, a.input], [a.out]


def cmd_eval(a, cfg):
    labels = dataio.read_labels(a.labels).labels
    if a.maps:
        maps = np.stack(list(dataio.read_scoremap_seq(a.maps)))
        scores, labels = metrics.frame_level(maps, labels)
        inputs = [a.labels, a.maps]
    elif a.scores:
        table = dataio.read_table(a.scores)
        if a.column not in table:
            raise FormatError(f"no column {a.column!r}", a.scores)
        scores = table[a.column]
        if len(scores) != len(labels):
            raise ValidationError(f"{len(scores)} scores but {len(labels)} labels")
        inputs = [a.labels, a.scores]
    else:
        raise ConfigError("eval needs --scores or --maps")
    curve = metrics.roc(scores, labels)
    result = {"auc": metrics.auc(curve), "eer": metrics.eer(curve),
              "roc_points": [list(p) for p in curve.points()]}
    roc_path = _sibling(Path(a.out), ".roc.csv")
    dataio.atomic_write(a.out, json.dumps(result, indent=2, sort_keys=True) + "\n")
    dataio.write_table(roc_path, ("threshold", "fpr", "tpr"),
                       [(float(t), float(f), float(p)) for t, f, p in
                        zip(curve.thresholds, curve.fpr, curve.tpr)])
    return inputs, [a.out, roc_path]


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="normalcy", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key, e.g. mjpf.n_particles=500")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "synthetic trajectories or regime corpora")
    p.add_argument("--spec", help="scenario JSON")
    p.add_argument("--regimes", help="comma-separated regime names for a transition corpus")
    p.add_argument("--n", type=int, default=500, help="samples per regime")
    p.add_argument("--labels", help="label CSV path (default: <out>.labels.csv)")
    p.add_argument("--out", required=True)

    p = add("lbt-extract", cmd_lbt_extract, "frame descriptors from tracklets")
    p.add_argument("--tracklets", required=True)
    p.add_argument("--frames", type=int, help="number of frames (default: from tracklets)")
    p.add_argument("--lenient", action="store_true", help="drop wrong-length tracklets")
    p.add_argument("--out", required=True)

    p = add("lbt-train", cmd_lbt_train, "one-class SVM on normal descriptors")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("lbt-score", cmd_lbt_score, "score descriptors with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("itq-fit", cmd_itq_fit, "learn a binary hash from feature maps")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("itq-encode", cmd_itq_encode, "binary codes per cell and frame")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("tcp", cmd_tcp, "irregularity maps from code grids")
    p.add_argument("--codes", required=True)
    p.add_argument("--maps", help="map sequence path (default: <out>.maps.nvm1)")
    p.add_argument("--out", required=True)

    p = add("fuse", cmd_fuse, "fuse TCP maps with optical-flow energy")
    p.add_argument("--tcp", dest="tcp_maps", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)

    p = add("sl-train", cmd_sl_train, "learn superstates and transitions from a trajectory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("mjpf-run", cmd_mjpf_run, "abnormality signal for a trajectory")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("hier-build", cmd_hier_build, "grow a model hierarchy over a transition corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--seed-regime", type=int, default=0, help="regime label of the seed subset")
    p.add_argument("--out", required=True)

    p = add("hier-eval", cmd_hier_eval, "score transitions with a hierarchy")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "ROC, AUC and EER of scores against labels")
    p.add_argument("--labels", required=True)
    p.add_argument("--scores", help="CSV with a score column")
    p.add_argument("--column", default="Y", help="score column name")
    p.add_argument("--maps", help="NVM1 map sequence; frame score is the max cell")
    p.add_argument("--out", required=True)
    return ap


def _fail(exc: BaseException, code: int) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.set)
        inputs, outputs = args.func(args, cfg)
        write_manifest(Path(args.out), args.command, cfg, inputs, outputs)
    except NormalcyError as e:
        return _fail(e, e.exit_code)
    except FileNotFoundError as e:
        return _fail(DataError(f"missing input: {e.filename}"), 3)
    except OSError as e:
        return _fail(DataError(str(e)), 3)
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        return _fail(e, 4)
    return 0


if __name__ == "__main__":
    sys.exit(main())
