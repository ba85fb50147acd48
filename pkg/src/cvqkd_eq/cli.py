"""Command-line entry point: one subcommand per reproduced artifact.

Exit status is 0 when every acceptance check passes, 2 when a check fails
and 1 on any error.  Outputs depend only on the configuration and seed.
"""

import argparse
import dataclasses
import json
import logging
import math
from pathlib import Path
import sys

import numpy as np

from .calibration import calibrate_fiber
from .classifier import QualityLabel
from .config import ConfigError, load_config, load_preset
from .dataset import link_rows, save_dataset, save_labels, write_table
from .experiment import (SWEEP_COLUMNS, StageError, classify_checks, classify_report, fit_classifier,
                         reproduce_table1, run_experiment_with_data, simulate_mix, sweep_checks, sweep_keyrate)
from .signal_chain import OSP_INDEX

log = logging.getLogger("cvqkd_eq")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
CHECK_COLUMNS = ("name", "value", "criterion", "pass")


def _resolve(args, default):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = load_preset(args.scenario or default)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _write_json(path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _write_checks(out, checks):
    rows = [{**c, "value": "" if c["value"] is None else c["value"]} for c in checks]
    write_table(out / "checks.csv", CHECK_COLUMNS, rows)


def _status(checks):
    for c in checks:
        log.info("%s %s = %s (%s)", "PASS" if c["pass"] else "FAIL", c["name"], c["value"], c["criterion"])
    return EXIT_OK if all(c["pass"] for c in checks) else EXIT_FAIL


def cmd_simulate(args, out):
    cfg = _resolve(args, "Fiber10km")
    record, link = run_experiment_with_data(cfg)
    data = record.to_dict()
    if args.format == "json":
        _write_json(out / "run.json", data)
    else:
        save_dataset(out / "dataset.csv", link_rows(link))
        rows = [{"estimate": tag, **{k: float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v
                                     for k, v in data[tag].items()}}
                for tag in ("raw", "equalized")]
        write_table(out / "estimates.csv", ("estimate", "m", "t_hat", "dt", "sigma2_hat", "dsigma", "T_hat",
                                            "eps_hat", "clamped"), rows)
    return EXIT_OK


def cmd_reproduce_table1(args, out):
    cfg = _resolve(args, "Fiber10km")
    res = reproduce_table1(cfg)
    if args.format == "json":
        _write_json(out / "table1.json", res)
    else:
        rows = [{"quantity": q, **{k: float(v) for k, v in cols.items()}} for q, cols in res["table"].items()]
        write_table(out / "table1.csv", ("quantity", "raw", "equalized", "theory"), rows)
        _write_checks(out, res["checks"])
    return _status(res["checks"])


def cmd_sweep_keyrate(args, out):
    cfg = _resolve(args, "Fiber10km")
    scenarios = {name: cfg if name == cfg.scenario else load_preset(name) for name in cfg.sweep.distances_km}
    rows = sweep_keyrate(cfg, scenarios)
    checks = sweep_checks(rows)
    if args.format == "json":
        _write_json(out / "sweep.json", {"rows": rows, "checks": checks})
    else:
        write_table(out / "sweep.csv", SWEEP_COLUMNS, rows)
        _write_checks(out, checks)
    return _status(checks)


def cmd_classify_report(args, out):
    cfg = _resolve(args, "FreeSpaceStrong")
    if not cfg.is_free_space:
        raise ConfigError("classify-report needs a free-space scenario")
    links = simulate_mix(cfg)
    bundle = fit_classifier(cfg, links)
    res = classify_report(cfg, links, bundle)
    checks = classify_checks(res)
    if args.format == "json":
        _write_json(out / "classify_report.json", {**res, "checks": checks})
    else:
        x, y, d, lab = [], [], [], []
        for name, link in links.items():
            t = link.test
            feats_y = link.pilots[t, OSP_INDEX]
            x.append(np.full(len(feats_y), link.pilot_x))
            y.append(feats_y)
            d.append(bundle.zones.mahalanobis(np.column_stack([x[-1], feats_y])))
            lab.append(bundle.routed[name][t])
        save_labels(out / "labels.csv", *(np.concatenate(a) for a in (x, y, d, lab)))
        conf = res["report"]["confusion"]
        rows = [{"truth": QualityLabel(i).title, **{QualityLabel(j).title: int(v) for j, v in enumerate(r)}}
                for i, r in enumerate(conf)]
        write_table(out / "confusion.csv", ("truth", *(QualityLabel(j).title for j in range(len(conf)))), rows)
        _write_checks(out, checks)
    return _status(checks)


def cmd_calibrate(args, out):
    cfg = _resolve(args, "Fiber10km")
    if cfg.is_free_space:
        raise ConfigError("calibrate needs a fiber scenario")
    ch = cfg.channel
    sigma2 = ch.phase.sigma2_phase if ch.phase is not None else 5e-4
    res = calibrate_fiber(ch.transmittance(), ch.excess_noise, cfg.protocol.v_a, sigma2_phase=sigma2,
                          eta=cfg.detector.eta)
    data = res.to_dict()
    if args.format == "json":
        _write_json(out / "calibration.json", data)
    else:
        fields = dataclasses.asdict(res)
        write_table(out / "calibration.csv", tuple(fields), [fields])
    ok = math.isclose(res.expected_T_raw, 0.5412, rel_tol=1e-6) and math.isclose(res.expected_eps_raw, 0.0429,
                                                                                  rel_tol=1e-6)
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "simulate": (cmd_simulate, "run one scenario end to end"),
    "reproduce-table1": (cmd_reproduce_table1, "raw / equalized / theory comparison on the fiber link"),
    "sweep-keyrate": (cmd_sweep_keyrate, "key rate versus distance for every scenario"),
    "classify-report": (cmd_classify_report, "classifier metrics and per-class versus pooled fit quality"),
    "calibrate": (cmd_calibrate, "solve the fiber fading constants against the raw targets"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="cvqkd-eq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log each check")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", type=Path, help="JSON experiment config")
        src.add_argument("--scenario", help="bundled scenario preset")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="json")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handler = COMMANDS[args.command][0]
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return handler(args, args.out)
    except (ConfigError, StageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
