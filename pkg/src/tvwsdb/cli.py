"""Command-line entry point: ``tvwsdb <subcommand> [options]``.

Stage subcommands read and write fixed file names inside ``--out`` so they
chain: simulate -> complete -> detect -> reuse / builddb -> serve.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys


from . import harness, service
from .boundary import detection_probability, dump_model, hypothesis_labels, load_model, train_svm
from .completion import FpcaConfig, fpca_complete, rse_db
from .grid import SpectrumMatrix, matrix_from_bytes, matrix_to_bytes
from .reuse import build_database, covered_set, write_mpep_csv
from .scenario import (ScenarioConfig, config_text, ground_truth_labels, ground_truth_matrix,
                       load_config, oracle_mpep, scenario_summary)
from .sensing import aggregate_to_grid, read_reports, synthesize_reports, write_reports

log = logging.getLogger("tvwsdb")

TRUTH, REPORTS, OBSERVED, RECOVERED = "truth.tvws", "reports.csv", "observed.tvws", "recovered.tvws"
MODEL, COVERED, MPEP, DATABASE = "model.txt", "covered.tvws", "mpep.csv", "database.tvwsdb"


def _config(args) -> ScenarioConfig:
    if args.config:
        return load_config(args.config)
    return harness.make_config(args.scenario)


def _path(args, name: str) -> str:
    return os.path.join(args.out, name)


def _read_matrix(path: str) -> SpectrumMatrix:
    with open(path, "rb") as fh:
        return matrix_from_bytes(fh.read())


def _write_matrix(path: str, mat: SpectrumMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(matrix_to_bytes(mat))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    G = ground_truth_matrix(cfg)
    rate = args.sampling_rate if args.sampling_rate is not None else cfg.sampling_rate
    batch = synthesize_reports(G, cfg.grid, cfg.n_sam, cfg.noise_dbm, rate, seed=args.seed)
    _write_matrix(_path(args, TRUTH), G)
    with open(_path(args, REPORTS), "w", encoding="utf-8") as fh:
        write_reports(batch, fh)
    for k, v in scenario_summary(cfg).items():
        print(f"{k}: {v}")
    print(f"reports: {len(batch)}")
    return 0


def cmd_complete(args) -> int:
    cfg = _config(args)
    with open(_path(args, REPORTS), encoding="utf-8") as fh:
        batch = read_reports(fh)
    agg = aggregate_to_grid(batch, cfg.grid, cfg.min_count, cfg.noise_dbm)
    res = fpca_complete(agg.matrix, FpcaConfig(noise_std_db=agg.noise_std_db))
    _write_matrix(_path(args, OBSERVED), agg.matrix)
    _write_matrix(_path(args, RECOVERED), res.matrix)
    print(f"known fraction: {agg.matrix.known_fraction:.4f}")
    print(f"iterations: {res.iterations} stages: {res.stages} converged: {res.converged}")
    if os.path.exists(_path(args, TRUTH)):
        print(f"rse_db: {rse_db(res.matrix, _read_matrix(_path(args, TRUTH))):.3f}")
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    labels = hypothesis_labels(_read_matrix(_path(args, RECOVERED)), cfg.p_bar_min, args.delta_p)
    model = train_svm(labels, cfg.grid, harness.KERNELS[args.kernel], seed=args.seed)
    covered = covered_set(model, cfg.grid)
    with open(_path(args, MODEL), "w", encoding="utf-8") as fh:
        dump_model(model, fh)
    _write_matrix(_path(args, COVERED), SpectrumMatrix(covered.astype(float)))
    print(f"support vectors: {len(model.alphas)} converged: {model.converged} "
          f"kkt: {model.kkt_residual:.2e}")
    if os.path.exists(_path(args, TRUTH)):
        truth = ground_truth_labels(_read_matrix(_path(args, TRUTH)), cfg.p_bar_min)
        print(f"detection probability: {detection_probability(covered, truth):.4f}")
    return 0


def _load_model_file(args):
    with open(_path(args, MODEL), encoding="utf-8") as fh:
        return load_model(fh)


def cmd_reuse(args) -> int:
    cfg = _config(args)
    mp = build_database(cfg.bs_loc, cfg.r_cell_km, _load_model_file(args), cfg.grid,
                        cfg.interference)
    with open(_path(args, MPEP), "w", encoding="utf-8") as fh:
        write_mpep_csv(mp, fh)
    counts = {c: int((mp.space_class == c).sum()) for c in (0, 1, 2)}
    print(f"black: {counts[0]} gray: {counts[1]} white: {counts[2]}")
    return 0


def cmd_builddb(args) -> int:
    cfg = _config(args)
    if args.source == "truth":
        truth = ground_truth_labels(ground_truth_matrix(cfg), cfg.p_bar_min)
        mp = oracle_mpep(cfg, truth, cfg.cell_mask)
    elif args.source == "model":
        mp = build_database(cfg.bs_loc, cfg.r_cell_km, _load_model_file(args), cfg.grid,
                            cfg.interference)
    else:
        rec = harness.recover(cfg, args.seed)
        covered = harness.detect(rec, args.delta_p, harness.KERNELS[args.kernel], args.seed)
        mp = build_database(cfg.bs_loc, cfg.r_cell_km, None, cfg.grid, cfg.interference,
                            covered=covered)
    db = service.DatabaseHandle.create(mp, cfg.name, config_text(cfg))
    path = args.db or _path(args, DATABASE)
    service.save(db, path)
    print(f"wrote {path} digest {db.digest:016x}")
    return 0


def cmd_serve(args) -> int:
    path = args.db or os.environ.get(service.ENV_DB_PATH) or _path(args, DATABASE)
    db = service.load(path)
    server = service.LookupServer(db, service.parse_endpoint(args.listen))
    print(f"serving {path} on {server.server_address[0]}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_eval(args) -> int:
    cache = harness.RecoveryCache()
    report = harness.EvalReport()
    rates = tuple(args.rates)
    if args.experiment == "rse":
        rows = harness.sweep_rse(args.scenario, rates, args.n_sam, args.cell_size, args.seeds, cache)
        report.rse_rows = rows
    elif args.experiment == "detection":
        report.detection_rows = harness.sweep_detection(
            args.scenario, ("rbf", "quadratic"), rates, args.seeds, cache=cache)
    elif args.experiment == "bias":
        spec = harness.RunSpec(scenario=args.scenario, sweep="delta_p", values=tuple(args.deltas),
                               seeds=args.seeds, output_dir=args.out)
        report = harness.run_pipeline(spec, cache)
    else:
        cfg = harness.make_config(args.scenario)
        truth = ground_truth_labels(ground_truth_matrix(cfg), cfg.p_bar_min)
        oracle = oracle_mpep(cfg, truth, cfg.cell_mask)
        for err in args.loc_errors:
            pooled = harness.BiasReport()
            for s in range(args.seeds):
                base = harness.baseline_mpep_map(cfg, err, s)
                pooled.extend(harness.bias_report(base, oracle, truth, cfg.interference))
            report.bias[f"loc_error_m={err:g}"] = pooled
    for path in harness.emit_csv(report, args.out):
        print(path)
    for label, br in report.bias.items():
        print(f"{label}: protected {br.protected_fraction():.4f} "
              f"violations {br.violations} conservative {br.conservative}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value scenario file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="working/output directory")
    common.add_argument("--scenario", choices=("I", "II"), default=argparse.SUPPRESS,
                        help="built-in scenario used when no --config is given")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="tvwsdb", parents=[common],
                                description="Crowd-sensed TV white space database pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="ground truth and crowd reports")
    s.add_argument("--sampling-rate", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("complete", parents=[common], help="aggregate reports and run FPCA")
    s.set_defaults(func=cmd_complete)

    for name, func, text in (("detect", cmd_detect, "train the coverage boundary"),
                             ("builddb", cmd_builddb, "build and save the MPEP database")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--delta-p", type=float, default=0.0, help="threshold offset in dB")
        s.add_argument("--kernel", choices=tuple(harness.KERNELS), default="rbf")
        s.set_defaults(func=func)
        if name == "builddb":
            s.add_argument("--source", choices=("pipeline", "model", "truth"), default="pipeline")
            s.add_argument("--db", help="output database path")

    s = sub.add_parser("reuse", parents=[common], help="MPEP table from a trained boundary")
    s.set_defaults(func=cmd_reuse)

    s = sub.add_parser("serve", parents=[common], help="answer lookups over TCP")
    s.add_argument("--db", help=f"database file (default ${service.ENV_DB_PATH})")
    s.add_argument("--listen", default="127.0.0.1:7878", help="host:port")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("eval", parents=[common], help="experiment sweeps written as CSV")
    s.add_argument("--experiment", choices=("rse", "detection", "bias", "baseline"),
                   default="bias")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--rates", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4, 0.5])
    s.add_argument("--n-sam", type=int, nargs="+", default=[10, 100])
    s.add_argument("--cell-size", type=float, nargs="+", default=[80.0, 160.0])
    s.add_argument("--deltas", type=float, nargs="+", default=list(harness.DEFAULT_DELTAS))
    s.add_argument("--loc-errors", type=float, nargs="+", default=[50.0, 150.0, 1000.0])
    s.set_defaults(func=cmd_eval)
    return p


GLOBAL_DEFAULTS = dict(config=None, seed=0, out=".", scenario="I", verbose=False)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # parent actions are shared with every subparser, so defaults are filled in here
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    os.makedirs(args.out, exist_ok=True)
    try:
        return args.func(args)
    except (OSError, ValueError, service.DatabaseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
