"""Command-line planner: plan, verify, and simulate subcommands.

``plan`` parses a network document, computes the transfer-optimal
partition for the given capacity, and writes a plan-report JSON plus a
per-scheme traffic CSV. ``verify`` cross-checks the planner against the
enumeration oracle and the analytic model against the tiled reference
executor. ``simulate`` replays a plan report through the staggered
pipeline simulator.

Exit codes: 0 success, 1 input or validation failure, 2 internal
invariant violation, 3 failed verification check.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import closure, executor, netspec, partitioner, pipeline, traffic

DEFAULT_SEED = 12345
DESK_SCALE_MAX_DIM = 64
DESK_SCALE_MAX_CHANNELS = 16

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2
EXIT_CHECK_FAILED = 3


class InputError(Exception):
    pass


def parse_capacity(text: str) -> int:
    """Byte count with optional binary K/M/G suffix ('3M' -> 3 * 1024**2)."""
    text = str(text).strip()
    scale = 1
    suffixes = {"K": 1024, "M": 1024 ** 2, "G": 1024 ** 3}
    if text and text[-1].upper() in suffixes:
        scale = suffixes[text[-1].upper()]
        text = text[:-1]
    try:
        value = int(text) * scale
    except ValueError:
        raise InputError(f"unparseable capacity {text!r}; use bytes or K/M/G suffix") from None
    if value < 1:
        raise InputError("capacity must be at least 1 byte")
    return value


@dataclass
class PlannerConfig:
    capacity_bytes: int = 3 * 1024 ** 2
    batch: int = 1
    element_bytes: int | None = None  # None: use the network document's value
    seed: int = DEFAULT_SEED
    oracle: bool = True
    compute_rate: float = 1e12  # MAC/s
    mem_bandwidth: float = 133e9  # B/s
    link_latency: float = 30e-6  # s per stage
    energy: traffic.EnergyConstants = field(default_factory=traffic.EnergyConstants)
    replica_cap: int = pipeline.DEFAULT_REPLICA_CAP
    data_parallel: int = 1
    stage_latencies: list[float] | None = None
    arrivals: dict | None = None
    out_dir: Path = Path("out")

    @property
    def rates(self) -> pipeline.Rates:
        return pipeline.Rates(self.compute_rate, self.mem_bandwidth, self.link_latency)

    def capacity_elems(self, element_bytes: int) -> int:
        elems = self.capacity_bytes // element_bytes
        if elems < 1:
            raise InputError("capacity is below one element")
        return elems


def load_config(path: str | Path | None) -> PlannerConfig:
    cfg = PlannerConfig()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise InputError(f"cannot read config {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise InputError(f"config {path} is not valid JSON: {err}") from None
    if "capacity" in doc:
        cfg.capacity_bytes = parse_capacity(doc["capacity"])
    for key in ("batch", "element_bytes", "seed", "oracle", "replica_cap",
                "data_parallel", "stage_latencies", "arrivals"):
        if key in doc:
            setattr(cfg, key, doc[key])
    rates = doc.get("rates", {})
    for key in ("compute_rate", "mem_bandwidth", "link_latency"):
        if key in rates:
            setattr(cfg, key, float(rates[key]))
    if "energy" in doc:
        cfg.energy = traffic.EnergyConstants(**doc["energy"])
    if "out" in doc:
        cfg.out_dir = Path(doc["out"])
    return cfg


def _merge_flags(cfg: PlannerConfig, args: argparse.Namespace) -> PlannerConfig:
    if getattr(args, "capacity", None) is not None:
        cfg.capacity_bytes = parse_capacity(args.capacity)
    if getattr(args, "batch", None) is not None:
        cfg.batch = args.batch
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out_dir = Path(args.out)
    if getattr(args, "oracle", None) is not None:
        cfg.oracle = args.oracle
    if getattr(args, "target_throughput", None) is not None:
        cfg.target_throughput = args.target_throughput
    return cfg


def _load_shaped(path_text: str, cfg: PlannerConfig) -> netspec.ShapedNetwork:
    path = Path(path_text)
    if not path.exists():
        try:
            path = netspec.bundled_network_path(path_text)
        except FileNotFoundError:
            raise InputError(f"cannot read network file {path_text!r}") from None
    try:
        spec = netspec.load_network(path)
    except OSError as err:
        raise InputError(f"cannot read network file {path}: {err}") from None
    if cfg.element_bytes is not None:
        spec = replace(spec, element_bytes=cfg.element_bytes)
    return netspec.infer_shapes(spec)


def _traffic_block(estimate: traffic.TrafficEstimate, element_bytes: int) -> dict:
    return {
        "feature_map_elems": estimate.feature_map_elems,
        "weight_elems": estimate.weight_elems,
        "boundary_link_elems": estimate.boundary_link_elems,
        "recompute_elems": estimate.recompute_elems,
        "dram_elems": estimate.dram_elems,
        "total_elems": estimate.total_elems,
        "total_bytes": estimate.total_bytes(element_bytes),
    }


def _energy_block(est: traffic.EnergyEstimate) -> dict:
    return {"compute_J": est.compute_J, "dram_J": est.dram_J,
            "link_J": est.link_J, "total_J": est.total_J}


def build_plan_report(net: netspec.ShapedNetwork, cfg: PlannerConfig) -> dict:
    element_bytes = net.element_bytes
    capacity_elems = cfg.capacity_elems(element_bytes)
    plan, _ = partitioner.optimal_partition(net, capacity_elems, cfg.batch)
    violations = partitioner.validate_plan(net, plan, capacity_elems)
    if violations:
        raise partitioner.PlanIntegrityError("; ".join(violations))

    base = traffic.baseline_traffic(net, cfg.batch)
    occ = traffic.plan_traffic(plan)
    square = traffic.square_tile_comparison(net, plan.boundaries, capacity_elems, cfg.batch)
    macs = cfg.batch * traffic.mac_count(net)
    pp = pipeline.build_pipeline(plan, cfg.rates)

    spans = []
    for sp in plan.spans:
        spans.append({
            "begin": sp.span.start,
            "end": sp.span.end,
            "tile_rows": sp.tile_rows,
            "resident": sp.resident,
            "rows_per_map": list(sp.footprint.rows_per_map),
            "closure_elems": sp.footprint.closure_elems,
            "weight_elems": sp.weight_elems,
            "footprint_elems": sp.footprint.total_elems,
            "input_elems": sp.input_elems,
            "output_elems": sp.output_elems,
            "transfer_elems": sp.transfer_elems,
            "mac_count": sp.mac_count,
        })
    stages = [{
        "begin": s.begin, "end": s.end,
        "compute_time": s.compute_time, "transfer_time": s.transfer_time,
        "link_latency": s.link_latency, "stage_latency": s.stage_latency,
        "replicas": s.replicas,
    } for s in pp.stages]
    base_total = base.total_elems
    return {
        "schema": "rowplan-plan-report/1",
        "network": net.name,
        "layers": net.num_layers,
        "map_dims": [list(d) for d in net.map_dims],
        "element_bytes": element_bytes,
        "capacity_bytes": cfg.capacity_bytes,
        "capacity_elems": capacity_elems,
        "batch": cfg.batch,
        "boundaries": list(plan.boundaries),
        "triplets": [[sp.span.start, sp.span.end, sp.tile_rows] for sp in plan.spans],
        "square_tiles": [[d.span.start, d.span.end, d.tile] for d in square.spans],
        "spans": spans,
        "residual_crossings": [
            {"source": c.source, "dest": c.dest, "penalty_elems": c.penalty_elems}
            for c in plan.crossings],
        "total_transfer_elems": plan.total_transfers,
        "capacity_split": {
            "weight_elems": sum(sp.weight_elems for sp in plan.spans if sp.resident),
            "closure_elems": sum(cfg.batch * sp.footprint.closure_elems
                                 for sp in plan.spans if sp.resident),
        },
        "mac_count": macs,
        "traffic": {
            "baseline": _traffic_block(base, element_bytes),
            "occam": _traffic_block(occ, element_bytes),
            "square_tile": _traffic_block(square.estimate, element_bytes),
        },
        "normalized": {
            "baseline": 1.0,
            "occam": occ.total_elems / base_total,
            "square_tile": square.estimate.total_elems / base_total,
        },
        "energy_J": {
            "baseline": _energy_block(traffic.estimate_energy(base, macs, element_bytes, cfg.energy)),
            "occam": _energy_block(traffic.estimate_energy(occ, macs, element_bytes, cfg.energy)),
            "square_tile": _energy_block(
                traffic.estimate_energy(square.estimate, macs, element_bytes, cfg.energy)),
        },
        "rates": {"compute_rate": cfg.compute_rate, "mem_bandwidth": cfg.mem_bandwidth,
                  "link_latency": cfg.link_latency},
        "pipeline": {
            "stages": stages,
            "fill_latency": pp.fill_latency,
            "steady_throughput": pp.steady_throughput,
        },
    }


def write_report(report: dict, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"plan_{report['network']}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


TRAFFIC_CSV_COLUMNS = [
    "network", "scheme", "feature_map_elems", "weight_elems", "boundary_link_elems",
    "recompute_elems", "dram_elems", "total_elems", "total_bytes", "normalized",
]


def write_traffic_csv(report: dict, out_dir: Path, filename: str | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / (filename or f"traffic_{report['network']}.csv")
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAFFIC_CSV_COLUMNS)
        writer.writeheader()
        for scheme in ("baseline", "occam", "square_tile"):
            row = dict(report["traffic"][scheme])
            row["network"] = report["network"]
            row["scheme"] = scheme
            row["normalized"] = report["normalized"][scheme]
            writer.writerow(row)
    return path


def cmd_plan(args: argparse.Namespace) -> int:
    try:
        cfg = _merge_flags(load_config(args.config), args)
        net = _load_shaped(args.network, cfg)
        report = build_plan_report(net, cfg)
    except (InputError, netspec.NetworkError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except partitioner.PlanIntegrityError as err:
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    report_path = write_report(report, cfg.out_dir)
    csv_path = write_traffic_csv(report, cfg.out_dir)
    spans = ", ".join(f"({t[0]},{t[1]},{t[2]})" for t in report["triplets"])
    print(f"{report['network']}: {len(report['triplets'])} span(s) {spans}")
    print(f"transfers: {report['total_transfer_elems']} elems "
          f"(baseline ratio {report['normalized']['occam']:.4f})")
    print(f"wrote {report_path}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def _desk_scale(net: netspec.ShapedNetwork) -> bool:
    return all(h <= DESK_SCALE_MAX_DIM and w <= DESK_SCALE_MAX_DIM
               and c <= DESK_SCALE_MAX_CHANNELS for h, w, c in net.map_dims)


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        cfg = _merge_flags(load_config(args.config), args)
        net = _load_shaped(args.network, cfg)
        capacity_elems = cfg.capacity_elems(net.element_bytes)
    except (InputError, netspec.NetworkError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT

    failures = []

    def report(name: str, ok: bool, detail: str = "") -> None:
        tag = "PASS" if ok else "FAIL"
        print(f"{tag} {name}" + (f": {detail}" if detail else ""))
        if not ok:
            failures.append(name)

    plan, _ = partitioner.optimal_partition(net, capacity_elems, cfg.batch)
    violations = partitioner.validate_plan(net, plan, capacity_elems)
    report("plan-self-consistency", not violations, "; ".join(violations))

    if cfg.oracle:
        if net.num_layers <= partitioner.BRUTE_FORCE_MAX_LAYERS:
            oracle = partitioner.brute_force_partition(net, capacity_elems, cfg.batch)
            report("dp-vs-oracle", plan.total_transfers == oracle.total_transfers,
                   f"dp={plan.total_transfers} oracle={oracle.total_transfers}")
        else:
            print(f"WARN dp-vs-oracle skipped: {net.num_layers} layers exceeds "
                  f"enumeration cap of {partitioner.BRUTE_FORCE_MAX_LAYERS}")

    if args.fixtures:
        try:
            image, weights, manifest = executor.load_fixture(args.fixtures)
        except (OSError, json.JSONDecodeError, KeyError) as err:
            print(f"error: cannot load fixtures from {args.fixtures}: {err}", file=sys.stderr)
            return EXIT_INPUT
    elif _desk_scale(net):
        image, weights = executor.seeded_tensors(net, cfg.seed)
        manifest = None
    else:
        print("WARN executor checks skipped: network exceeds desk-scale caps "
              f"({DESK_SCALE_MAX_DIM}x{DESK_SCALE_MAX_DIM}x{DESK_SCALE_MAX_CHANNELS})")
        image = None
        manifest = None

    if image is not None:
        if not plan.fully_resident:
            print("WARN executor checks skipped: plan has non-resident spans at this capacity")
        else:
            ref = executor.run_naive(net, weights, image)
            images = np.stack([image] * plan.batch) if plan.batch > 1 else image
            run = executor.run_tiled(net, plan, weights, images)
            report("tiled-vs-naive",
                   all(np.array_equal(run.outputs[b], ref) for b in range(plan.batch)))
            model = traffic.plan_traffic(plan)
            report("ledger-vs-model", run.ledger.total == model.total_elems,
                   f"ledger={run.ledger.total} model={model.total_elems}")
            peaks_ok = all(peak <= sp.footprint.closure_elems
                           for peak, sp in zip(run.span_peaks, plan.spans))
            report("peak-within-closure", peaks_ok,
                   f"peaks={list(run.span_peaks)} "
                   f"bounds={[sp.footprint.closure_elems for sp in plan.spans]}")
            if manifest is not None:
                report("golden-hash",
                       executor.tensor_sha256(ref) == manifest["golden"]["sha256"])

    if failures:
        dump = {
            "network": net.spec.to_document(),
            "capacity_elems": capacity_elems,
            "batch": cfg.batch,
            "seed": cfg.seed,
            "failed": failures,
        }
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        repro = cfg.out_dir / f"verify_failure_{net.name}.json"
        repro.write_text(json.dumps(dump, indent=2, sort_keys=True) + "\n")
        print(f"wrote reproduction dump {repro}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _arrival_times(cfg: PlannerConfig) -> list[float]:
    spec = cfg.arrivals or {"times": [0.0]}
    if "times" in spec:
        return [float(t) for t in spec["times"]]
    count = int(spec.get("count", 1))
    period = float(spec.get("period", 0.0))
    start = float(spec.get("start", 0.0))
    return pipeline.periodic_arrivals(count, period, start)


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        cfg = _merge_flags(load_config(args.config), args)
        try:
            report = json.loads(Path(args.plan_report).read_text())
        except OSError as err:
            raise InputError(f"cannot read plan report {args.plan_report}: {err}") from None
        except json.JSONDecodeError as err:
            raise InputError(f"plan report is not valid JSON: {err}") from None
        if cfg.stage_latencies is not None:
            # Direct latencies are taken as complete per-stage figures.
            pp = pipeline.PipelinePlan.from_latencies([float(x) for x in cfg.stage_latencies])
        else:
            stages = tuple(
                pipeline.StageModel(
                    begin=s["begin"], end=s["end"], compute_time=s["compute_time"],
                    transfer_time=s["transfer_time"], link_latency=s["link_latency"])
                for s in report["pipeline"]["stages"])
            pp = pipeline.PipelinePlan(stages)
        target = getattr(args, "target_throughput", None)
        if target is not None:
            try:
                pp = pipeline.replicate_stages(pp, target, cfg.replica_cap)
            except pipeline.UnreachableThroughputError as err:
                raise InputError(str(err)) from None
        arrivals = _arrival_times(cfg)
        try:
            sim = pipeline.simulate_stap(pp, arrivals)
        except ValueError as err:
            raise InputError(str(err)) from None
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = cfg.out_dir / "trace.csv"
    with trace_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["job_id", "stage", "replica", "start", "end"])
        writer.writerows(sim.trace_rows())
    achieved = sim.achieved_throughput
    summary = {
        "stages": [{
            "begin": s.begin, "end": s.end,
            "compute_time": s.compute_time, "transfer_time": s.transfer_time,
            "link_latency": s.link_latency, "stage_latency": s.stage_latency,
            "replicas": s.replicas,
        } for s in pp.stages],
        "replicas": list(pp.replicas),
        "fill_latency": pp.fill_latency,
        "steady_throughput": pp.steady_throughput,
        "target_throughput": target,
        "jobs": len(sim.jobs),
        "mean_latency": sim.mean_latency,
        "achieved_throughput": achieved,
        "queue_growing": sim.queue_growing,
        "data_parallel": cfg.data_parallel,
        "scaled_throughput": None if achieved is None else achieved * cfg.data_parallel,
    }
    summary_path = cfg.out_dir / "pipeline_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"replicas {summary['replicas']}, fill latency {pp.fill_latency:g}, "
          f"steady throughput {pp.steady_throughput:g}")
    print(f"simulated {len(sim.jobs)} job(s): mean latency {sim.mean_latency:g}"
          + (f", achieved throughput {achieved:g}" if achieved else "")
          + (", queue growing" if sim.queue_growing else ""))
    print(f"wrote {trace_path}")
    print(f"wrote {summary_path}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="seed for randomized checks")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rowplan",
        description="Partition a convolutional stack for on-chip residence and "
                    "model the resulting traffic and pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="compute the optimal partition and write reports")
    p.add_argument("--network", required=True, help="network JSON file or bundled name")
    p.add_argument("--capacity", help="on-chip capacity in bytes (K/M/G suffixes)")
    p.add_argument("--batch", type=int, help="mini-batch size")
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify", help="cross-check planner and executor")
    p.add_argument("--network", required=True, help="network JSON file or bundled name")
    p.add_argument("--capacity", help="on-chip capacity in bytes (K/M/G suffixes)")
    p.add_argument("--batch", type=int, help="mini-batch size")
    p.add_argument("--oracle", action=argparse.BooleanOptionalAction, default=None,
                   help="enable/disable the enumeration oracle")
    p.add_argument("--fixtures", help="fixture directory with golden manifest")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="simulate the staggered pipeline for a plan report")
    p.add_argument("plan_report", help="plan report JSON from the plan command")
    p.add_argument("--target-throughput", type=float, dest="target_throughput",
                   help="replicate bottleneck stages until this jobs/s is met")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
