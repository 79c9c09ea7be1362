"""Command-line entry point: ``holoidet {sense,orient,transmit,experiment,gainmap}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from holoidet.errors import HoloIdetError, InfeasibleError
from holoidet.harness import experiments, protocol
from holoidet.harness.scenario import SCHEMES, Scenario, trial_seed
from holoidet.rhs import gain_profile

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="holoidet", description="Movable holographic-surface IDET simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--scenario", type=Path, help="JSON or TOML scenario file")
    common.add_argument("--seed", type=int, help="trial seed (single runs) or master seed (experiment)")
    common.add_argument("--trials", type=int, help="override the scenario's trial count")
    common.add_argument("--scheme", choices=SCHEMES, help="override the scenario's scheme")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--full-scale", action="store_true", help="32x32 surfaces and 50 slots")

    sub.add_parser("sense", parents=[common], help="Stage I: uplink sensing estimates")
    sub.add_parser("orient", parents=[common], help="Stages I-II: sensing and orientation")
    sub.add_parser("transmit", parents=[common], help="full protocol with downlink metrics")
    exp = sub.add_parser("experiment", parents=[common], help="figure sweep with CSV and manifest output")
    exp.add_argument("--fig", help="figure id (4-10)")
    exp.add_argument("--manifest", type=Path, help="re-run a previous experiment from its manifest")
    sub.add_parser("gainmap", parents=[common], help="directional gain map of the designed surface")
    return parser


def load_scenario(args) -> Scenario:
    sc = Scenario() if args.scenario is None else Scenario.load(args.scenario)
    if args.full_scale:
        sc = sc.full_scale()
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.scheme is not None:
        changes["scheme"] = args.scheme
    if args.seed is not None and args.command == "experiment":
        changes["seed"] = args.seed
    return sc.replace(**changes) if changes else sc


def _single_seed(args, sc: Scenario) -> int:
    return args.seed if args.seed is not None else trial_seed(sc.seed, 0)


def _dump(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def cmd_sense(args, sc: Scenario) -> int:
    seed = _single_seed(args, sc)
    hw = protocol.hardware(sc)
    channel = protocol.draw_channel(protocol.channel_config(sc), np.random.SeedSequence([seed, protocol.STREAM_CHANNEL]))
    out = protocol.stage_sensing(sc, hw, channel, seed)
    _dump(args.out / "estimates.json", {
        "seed": seed,
        "scheme": sc.scheme,
        "estimates": out.estimates.tolist(),
        "truths": out.truths.tolist(),
        "errors": out.errors.tolist(),
        "rmse": float(out.errors.mean()),
        "detections": [r.to_dict() for r in out.records],
    })
    return EXIT_OK


def cmd_orient(args, sc: Scenario) -> int:
    seed = _single_seed(args, sc)
    prep = protocol.prepare(sc, seed)
    _dump(args.out / "orientation.json", {"seed": seed, "scheme": sc.scheme, "order": prep.order.tolist(),
                                          **prep.orientation.to_dict()})
    return EXIT_OK


def cmd_transmit(args, sc: Scenario) -> int:
    seed = _single_seed(args, sc)
    res = protocol.run_protocol(sc, seed)
    payload = {"seed": seed, "scheme": sc.scheme, "status": res.status, "min_dc": res.min_dc,
               "overhead": res.overhead, "certificate": res.certificate}
    if res.metrics is not None:
        payload.update(rho=res.idet.state.rho.tolist(), sinr=res.metrics.sinr.tolist(),
                       rate=res.metrics.rate.tolist(), p_eh=res.metrics.p_eh.tolist(),
                       p_dc=res.metrics.p_dc.tolist())
    _dump(args.out / "metrics.json", payload)
    return EXIT_OK if res.status == "ok" else EXIT_INFEASIBLE


def cmd_experiment(args, sc: Scenario) -> int:
    if args.manifest is not None:
        _, same = experiments.rerun_manifest(args.manifest, args.out)
        print("reproduced" if same else "outputs differ from manifest")
        return EXIT_OK if same else EXIT_ERROR
    if args.fig is None:
        raise HoloIdetError("experiment needs --fig or --manifest")
    manifest = experiments.run_figure(args.fig, sc, args.out)
    for name in manifest["files"]:
        print(args.out / name)
    return EXIT_OK


def cmd_gainmap(args, sc: Scenario) -> int:
    hw = protocol.hardware(sc)
    profile = gain_profile(hw.layout, hw.em, hw.weights0)
    args.out.mkdir(parents=True, exist_ok=True)
    profile.to_csv(args.out / "gainmap.csv")
    _dump(args.out / "gainmap.json", {"max_gain_direction": hw.max_gain_dir.tolist(), "max_gain": hw.max_gain,
                                      "feeds": hw.layout.feeds.tolist(), "weights": hw.weights0.tolist(),
                                      "anisotropy": profile.anisotropy})
    return EXIT_OK


COMMANDS = {"sense": cmd_sense, "orient": cmd_orient, "transmit": cmd_transmit, "experiment": cmd_experiment,
            "gainmap": cmd_gainmap}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args)
        return COMMANDS[args.command](args, sc)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (HoloIdetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
