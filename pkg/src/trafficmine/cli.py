"""Command-line surface for the traffic mining pipeline.

Every stage reads and writes plain files, emits warnings to stderr only, and
drops a ``<output>.meta.json`` sidecar (tool, version, config digest, stage)
next to each artifact. Exit codes: 0 success, 1 configuration/validation
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .conformance import conformance_report, report_csv
from .discovery import discover
from .errors import ConfigInvalid, InputMissing, TrafficMineError
from .eventlog import export_xes, extract_event_logs, read_log, write_log
from .evaluation import roc_csv
from .experiments import (Roles, classification_csv, heatmap_csv,
                          run_experiment1, run_experiment2)
from .ingest import (ClientSpec, PacketRecord, parse_pcap, read_canonical,
                     to_packet_records, write_canonical, write_pcap)
from .states import (align_states, apply_standardization, assign_states,
                     fit_kmeans, fit_standardization, load_state_model,
                     read_labeled_csv, save_state_model, write_labeled_csv)
from .synth import COHORT_NAMES, InvalidSpec, builtin_specs, generate_cohort
from .windows import (WindowConfig, extract_windows, read_window_csv,
                      write_window_csv)

log = logging.getLogger("trafficmine")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; bad usage is a validation failure."""

    def error(self, message: str) -> None:  # noqa: D102
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise InputMissing(f"input file not found: {path}")
    return p.read_text(encoding="utf-8")


def _read_bytes(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise InputMissing(f"input file not found: {path}")
    return p.read_bytes()


def _config_digest(effective: dict) -> str:
    blob = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _emit(path: Path, payload, stage: str, digest: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, bytes):
        path.write_bytes(payload)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
    meta = {"tool": "trafficmine", "version": __version__,
            "config_digest": digest, "stage": stage}
    with open(path.with_name(path.name + ".meta.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    text = _read_text(path)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigInvalid("config root must be a JSON object")
    cfg["_dir"] = str(Path(path).parent)
    return cfg


def _opt(args: argparse.Namespace, cfg: dict, key: str, default=None):
    """CLI flag beats config key beats default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    return cfg.get(key, default)


def _opt_path(args: argparse.Namespace, cfg: dict, key: str) -> Optional[str]:
    """Like _opt for paths; config-sourced paths resolve against the config."""
    v = getattr(args, key, None)
    if v is not None:
        return str(v)
    if key in cfg:
        return _resolve(str(cfg[key]), cfg)
    return None


def _require(value, key: str):
    if value is None:
        raise ConfigInvalid(f"missing required option {key!r}")
    return value


def _resolve(path: str, cfg: dict) -> str:
    """Paths inside a config file are relative to that file."""
    base = cfg.get("_dir")
    p = Path(path)
    if base and not p.is_absolute():
        return str(Path(base) / p)
    return str(p)


def _load_device_records(cfg: dict) -> Dict[str, List[PacketRecord]]:
    devices = cfg.get("devices")
    if devices is not None:
        paths = {d: _resolve(str(p), cfg) for d, p in devices.items()}
    elif "devices_manifest" in cfg:
        manifest_path = _resolve(cfg["devices_manifest"], cfg)
        manifest = json.loads(_read_text(manifest_path))
        # manifest entries are relative to the manifest, not the config
        paths = {d: str(Path(manifest_path).parent / rel)
                 for d, rel in manifest["devices"].items()}
    else:
        paths = {}
    if not paths:
        raise ConfigInvalid("config needs a 'devices' map or 'devices_manifest'")
    return {d: read_canonical(_read_text(p)) for d, p in paths.items()}


# ---------------------------------------------------------------- commands


def _cmd_ingest(args: argparse.Namespace, cfg: dict) -> int:
    client = ClientSpec.parse(_require(_opt(args, cfg, "client"), "client"))
    if args.pcap:
        pcaps = list(args.pcap)
    else:
        pcaps = [_resolve(str(p), cfg) for p in cfg.get("pcaps", [])]
    _require(pcaps or None, "pcap")
    start = int(_opt(args, cfg, "session_start", 1))
    records: List[PacketRecord] = []
    for i, path in enumerate(pcaps):
        result = parse_pcap(_read_bytes(path))
        if result.skipped_frames:
            log.warning("%s: skipped %d non-TCP/IPv4 frame(s) of %d", path,
                        result.skipped_frames, result.total_frames)
        records.extend(to_packet_records(result.packets, client,
                                         session_number=start + i))
    out = Path(_require(_opt_path(args, cfg, "out"), "out"))
    digest = _config_digest({"client": str(client.network), "pcaps": list(pcaps),
                             "session_start": start})
    _emit(out, write_canonical(records), "ingest", digest)
    return 0


def _cmd_features(args: argparse.Namespace, cfg: dict) -> int:
    wl = int(_require(_opt(args, cfg, "window_length"), "window-length"))
    records = read_canonical(_read_text(_require(
        _opt_path(args, cfg, "records"), "records")))
    stats = extract_windows(records, WindowConfig(wl))
    out = Path(_require(_opt_path(args, cfg, "out"), "out"))
    _emit(out, write_window_csv(stats), "features",
          _config_digest({"window_length": wl, "records": args.records}))
    return 0


def _cmd_states(args: argparse.Namespace, cfg: dict) -> int:
    out = Path(_require(_opt_path(args, cfg, "out"), "out"))
    if args.mode == "fit":
        k = int(_require(_opt(args, cfg, "k"), "k"))
        seed = int(_opt(args, cfg, "seed", 0))
        stats = read_window_csv(_read_text(_require(
            _opt_path(args, cfg, "features"), "features")))
        std = fit_standardization(stats)
        model = fit_kmeans(apply_standardization(std, stats), k, seed)
        _emit(out, save_state_model(std, model), "states-fit",
              _config_digest({"k": k, "seed": seed, "features": args.features}))
        return 0
    # apply
    wl = int(_require(_opt(args, cfg, "window_length"), "window-length"))
    std, model = load_state_model(_read_text(_require(
        _opt_path(args, cfg, "model"), "model")))
    records = read_canonical(_read_text(_require(
        _opt_path(args, cfg, "records"), "records")))
    wcfg = WindowConfig(wl)
    stats = extract_windows(records, wcfg)
    assignments = assign_states(model, apply_standardization(std, stats))
    labeled = align_states(records, list(assignments), wcfg)
    _emit(out, write_labeled_csv(labeled), "states-apply",
          _config_digest({"window_length": wl, "model": args.model,
                          "records": args.records}))
    return 0


def _cmd_logs(args: argparse.Namespace, cfg: dict) -> int:
    wl = int(_require(_opt(args, cfg, "window_length"), "window-length"))
    k = int(_require(_opt(args, cfg, "k"), "k"))
    device = _opt(args, cfg, "device", "d")
    labeled = read_labeled_csv(_read_text(_require(
        _opt_path(args, cfg, "labeled"), "labeled")))
    logs = extract_event_logs(labeled, WindowConfig(wl), k, device_id=device)
    out_dir = Path(_require(_opt_path(args, cfg, "out"), "out"))
    digest = _config_digest({"window_length": wl, "k": k, "device": device,
                             "labeled": args.labeled})
    for state in sorted(logs):
        _emit(out_dir / f"state_{state}.jsonl", write_log(logs[state]),
              "logs", digest)
        if args.xes:
            _emit(out_dir / f"state_{state}.xes", export_xes(logs[state]),
                  "logs", digest)
    return 0


def _cmd_discover(args: argparse.Namespace, cfg: dict) -> int:
    state = int(_opt(args, cfg, "state", 1))
    threshold = float(_opt(args, cfg, "noise_threshold", 0.2))
    keep = float(_opt(args, cfg, "keep_fraction", 1.0))
    event_log = read_log(_read_text(_require(
        _opt_path(args, cfg, "log"), "log")), state=state)
    if keep < 1.0:
        from .eventlog import variant_filter
        event_log = variant_filter(event_log, keep)
    tree, net = discover(event_log, noise_threshold=threshold)
    out = Path(_require(_opt_path(args, cfg, "out"), "out"))
    digest = _config_digest({"state": state, "noise_threshold": threshold,
                             "keep_fraction": keep, "log": args.log})
    from .petri import export_pnml
    _emit(out.with_suffix(".pnml"), export_pnml(net), "discover", digest)
    _emit(out.with_suffix(".tree.txt"), tree.to_text() + "\n", "discover", digest)
    return 0


def _cmd_check(args: argparse.Namespace, cfg: dict) -> int:
    from .petri import import_pnml
    state = int(_opt(args, cfg, "state", 1))
    event_log = read_log(_read_text(_require(
        _opt_path(args, cfg, "log"), "log")), state=state)
    net = import_pnml(_read_text(_require(_opt_path(args, cfg, "net"), "net")))
    rows = conformance_report(event_log, net)
    out = Path(_require(_opt_path(args, cfg, "out"), "out"))
    _emit(out, report_csv(rows), "check",
          _config_digest({"state": state, "log": args.log, "net": args.net}))
    total = sum(r.frequency for r in rows)
    mean_fitness = sum(r.fitness * r.frequency for r in rows) / total
    print(f"{len(rows)} variant(s), {total} trace(s), "
          f"log fitness {mean_fitness:.6f}")
    return 0


def _grid(cfg: dict, args: argparse.Namespace):
    wls = _opt(args, cfg, "window_lengths")
    ks = _opt(args, cfg, "state_counts")
    if isinstance(wls, str):
        wls = [int(x) for x in wls.split(",")]
    if isinstance(ks, str):
        ks = [int(x) for x in ks.split(",")]
    _require(wls, "window_lengths")
    _require(ks, "state_counts")
    return [int(w) for w in wls], [int(k) for k in ks]


def _cmd_exp1(args: argparse.Namespace, cfg: dict) -> int:
    device_records = _load_device_records(cfg)
    wls, ks = _grid(cfg, args)
    seed = int(_opt(args, cfg, "seed", 0))
    workers = int(_opt(args, cfg, "workers", 1))
    cells = run_experiment1(
        device_records, wls, ks, seed,
        noise_threshold=float(_opt(args, cfg, "noise_threshold", 0.2)),
        keep_fraction=float(_opt(args, cfg, "keep_fraction", 1.0)),
        preprocess_device=_opt(args, cfg, "preprocess_device"),
        workers=workers)
    out_dir = Path(_require(_opt_path(args, cfg, "out"), "out"))
    digest = _config_digest({k: v for k, v in cfg.items() if k != "_dir"}
                            or {"seed": seed})
    _emit(out_dir / "heatmap.csv", heatmap_csv(cells), "exp1", digest)
    return 0


def _cmd_exp2(args: argparse.Namespace, cfg: dict) -> int:
    device_records = _load_device_records(cfg)
    wls, ks = _grid(cfg, args)
    roles_cfg = cfg.get("roles")
    if not isinstance(roles_cfg, dict):
        raise ConfigInvalid("exp2 config needs a 'roles' object")
    try:
        roles = Roles(train=roles_cfg["train"],
                      validation=tuple(roles_cfg["validation"]),
                      test_own=tuple(roles_cfg["test_own"]),
                      test_foreign=tuple(roles_cfg["test_foreign"]))
    except KeyError as exc:
        raise ConfigInvalid(f"roles missing key {exc}") from None
    seed = int(_opt(args, cfg, "seed", 0))
    cells = run_experiment2(
        device_records, roles, wls, ks, seed,
        noise_threshold=float(_opt(args, cfg, "noise_threshold", 0.2)),
        keep_fraction=float(_opt(args, cfg, "keep_fraction", 1.0)),
        segment_fraction=float(_opt(args, cfg, "segment_fraction", 0.01)),
        workers=int(_opt(args, cfg, "workers", 1)))
    out_dir = Path(_require(_opt_path(args, cfg, "out"), "out"))
    digest = _config_digest({k: v for k, v in cfg.items() if k != "_dir"})
    _emit(out_dir / "classification.csv", classification_csv(cells), "exp2",
          digest)
    for cell in cells:
        tag = f"{cell.window_length}_{cell.k}"
        _emit(out_dir / f"roc_{tag}.csv", roc_csv(cell.roc), "exp2", digest)
        doc = {"window_length": cell.window_length, "k": cell.k,
               "pmf_own": cell.pmf_own.to_json_dict(),
               "pmf_foreign": cell.pmf_foreign.to_json_dict(),
               "thresholds": {str(s): t for s, t in cell.thresholds.items()},
               "intersection": cell.intersection,
               "cosine_similarity": cell.cosine_similarity, "auc": cell.auc}
        _emit(out_dir / f"pmf_{tag}.json",
              json.dumps(doc, sort_keys=True, indent=2) + "\n", "exp2", digest)
    return 0


def _cmd_synth(args: argparse.Namespace, cfg: dict) -> int:
    cohort = _require(_opt(args, cfg, "cohort"), "cohort")
    seed = int(_opt(args, cfg, "seed", 0))
    distinctness = float(_opt(args, cfg, "distinctness", 1.0))
    specs = builtin_specs(cohort, seed, distinctness)
    cohort_records = generate_cohort(specs)
    out_dir = Path(_require(_opt_path(args, cfg, "out"), "out"))
    digest = _config_digest({"cohort": cohort, "seed": seed,
                             "distinctness": distinctness})
    manifest = {"cohort": cohort, "seed": seed,
                "devices": {s.device_id: f"{s.device_id}.csv" for s in specs},
                "profiles": {s.device_id: s.profile.name for s in specs}}
    for spec in specs:
        records = cohort_records[spec.device_id]
        _emit(out_dir / f"{spec.device_id}.csv", write_canonical(records),
              "synth", digest)
        if args.pcap:
            by_session: Dict[int, List[PacketRecord]] = {}
            for r in records:
                by_session.setdefault(r.session_number, []).append(r)
            for snum in sorted(by_session):
                _emit(out_dir / f"{spec.device_id}_s{snum}.pcap",
                      write_pcap(by_session[snum]), "synth", digest)
    _emit(out_dir / "manifest.json",
          json.dumps(manifest, sort_keys=True, indent=2) + "\n", "synth",
          digest)
    return 0


def _cmd_report(args: argparse.Namespace, cfg: dict) -> int:
    headers = {"exp1": "window_length,k,sim,sep,comp",
               "exp2": "window_length,k,intersection,cosine_similarity,auc"}
    header = headers[args.kind]
    rows: Dict[tuple, str] = {}
    for path in args.inputs:
        lines = _read_text(path).splitlines()
        if not lines or lines[0] != header:
            raise ConfigInvalid(f"{path}: expected header {header!r}")
        for line in lines[1:]:
            if not line:
                continue
            wl, k = line.split(",")[:2]
            rows[(int(wl), int(k))] = line
    body = "\n".join(rows[key] for key in sorted(rows))
    out = Path(_require(_opt_path(args, cfg, "out"), "out"))
    _emit(out, header + "\n" + body + "\n", "report",
          _config_digest({"kind": args.kind, "inputs": list(args.inputs)}))
    return 0


# ------------------------------------------------------------------ parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="trafficmine",
                     description="Behavioral traffic models from TCP captures")
    parser.add_argument("--version", action="version",
                        version=f"trafficmine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--config", help="JSON config file; flags override keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="output file or directory")

    p = sub.add_parser("ingest", help="pcap capture(s) to canonical packet CSV")
    common(p)
    p.add_argument("--pcap", action="append",
                   help="pcap file; repeat for multiple sessions")
    p.add_argument("--client", help="client network in CIDR form")
    p.add_argument("--session-start", dest="session_start", type=int)

    p = sub.add_parser("features", help="canonical CSV to window feature CSV")
    common(p)
    p.add_argument("--records")
    p.add_argument("--window-length", dest="window_length", type=int)

    p = sub.add_parser("states", help="fit or apply the clustered state model")
    common(p)
    p.add_argument("--mode", choices=("fit", "apply"), required=True)
    p.add_argument("--features")
    p.add_argument("--k", type=int)
    p.add_argument("--model")
    p.add_argument("--records")
    p.add_argument("--window-length", dest="window_length", type=int)

    p = sub.add_parser("logs", help="state-labeled CSV to per-state JSONL logs")
    common(p)
    p.add_argument("--labeled")
    p.add_argument("--window-length", dest="window_length", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--device")
    p.add_argument("--xes", action="store_true", help="also write XES files")

    p = sub.add_parser("discover", help="mine a Petri net from an event log")
    common(p)
    p.add_argument("--log")
    p.add_argument("--state", type=int)
    p.add_argument("--noise-threshold", dest="noise_threshold", type=float)
    p.add_argument("--keep-fraction", dest="keep_fraction", type=float)

    p = sub.add_parser("check", help="align an event log against a PNML net")
    common(p)
    p.add_argument("--log")
    p.add_argument("--state", type=int)
    p.add_argument("--net")

    p = sub.add_parser("exp1", help="cross-device similarity grid")
    common(p)
    p.add_argument("--window-lengths", dest="window_lengths")
    p.add_argument("--state-counts", dest="state_counts")
    p.add_argument("--noise-threshold", dest="noise_threshold", type=float)
    p.add_argument("--keep-fraction", dest="keep_fraction", type=float)
    p.add_argument("--preprocess-device", dest="preprocess_device")

    p = sub.add_parser("exp2", help="foreign-game classification experiment")
    common(p)
    p.add_argument("--window-lengths", dest="window_lengths")
    p.add_argument("--state-counts", dest="state_counts")
    p.add_argument("--noise-threshold", dest="noise_threshold", type=float)
    p.add_argument("--keep-fraction", dest="keep_fraction", type=float)
    p.add_argument("--segment-fraction", dest="segment_fraction", type=float)

    p = sub.add_parser("synth", help="generate a synthetic device cohort")
    common(p)
    p.add_argument("--cohort", choices=COHORT_NAMES)
    p.add_argument("--distinctness", type=float)
    p.add_argument("--pcap", action="store_true",
                   help="also write per-session pcap files")

    p = sub.add_parser("report", help="merge per-run experiment CSV fragments")
    common(p)
    p.add_argument("--kind", choices=("exp1", "exp2"), required=True)
    p.add_argument("--inputs", nargs="+", required=True)

    return parser


_HANDLERS = {
    "ingest": _cmd_ingest, "features": _cmd_features, "states": _cmd_states,
    "logs": _cmd_logs, "discover": _cmd_discover, "check": _cmd_check,
    "exp1": _cmd_exp1, "exp2": _cmd_exp2, "synth": _cmd_synth,
    "report": _cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return _HANDLERS[args.command](args, cfg)
    except (ConfigInvalid, InputMissing, InvalidSpec, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except TrafficMineError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
