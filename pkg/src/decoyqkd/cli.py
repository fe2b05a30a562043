"""Batch command line: scans, yield bounds, squasher reports, characterization.

Configuration is a JSON file validated against a closed schema (unknown
keys are rejected) whose physical defaults mirror the shipped analysis:
0.2 dB/km fiber loss, Shannon-limit error correction, photon cut-off 10,
receiver subspace cut-off 1.  Every report echoes the configuration it
was produced from.

Exit codes: 0 success, 2 configuration/usage error, 3 solver
non-convergence (partial report still written), 4 infeasible statistics.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from . import channel as channel_mod
from . import decoy as decoy_mod
from . import keyrate as keyrate_mod
from . import protocols, squasher
from .fock import ModeMatrix

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INFEASIBLE = 4

_CHANNEL_KEYS = {
    "distance_km",
    "loss_db_per_km",
    "misalignment_deg",
    "depolarization",
    "dark_count",
    "detector_efficiencies",
}
_TOLERANCE_KEYS = {"decoy_gap", "fw_gap", "fw_max_iter"}
_CONFIG_KEYS = {
    "protocol",
    "basis_probs",
    "signal_intensity",
    "decoy_intensities",
    "signal_probs",
    "p_gen",
    "decoy_probs",
    "channel",
    "n_ph",
    "n_b",
    "use_sdp_decoy",
    "vacuum_term",
    "f_ec",
    "tolerances",
}


class ConfigError(Exception):
    pass


def _reject_unknown(d, allowed, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, _CONFIG_KEYS, "config")
    if raw.get("protocol") not in ("bb84", "sixstate"):
        raise ConfigError("protocol must be 'bb84' or 'sixstate'")
    if "signal_intensity" not in raw:
        raise ConfigError("signal_intensity is required")
    _reject_unknown(raw.get("channel", {}), _CHANNEL_KEYS, "channel")
    _reject_unknown(raw.get("tolerances", {}), _TOLERANCE_KEYS, "tolerances")
    return raw


def build_objects(cfg: dict):
    """Protocol, plan, channel template, and options from a validated config."""
    try:
        if cfg["protocol"] == "bb84":
            bp = cfg.get("basis_probs", {"z": 0.5, "x": 0.5})
            _reject_unknown(bp, {"z", "x"}, "basis_probs")
            protocol = protocols.bb84_spec(bp.get("z", 0.5), bp.get("x", 0.5))
        else:
            bp = cfg.get("basis_probs", {"hv": 1 / 3, "ad": 1 / 3, "rl": 1 / 3})
            _reject_unknown(bp, {"hv", "ad", "rl"}, "basis_probs")
            protocol = protocols.sixstate_spec(
                bp.get("hv", 1 / 3),
                bp.get("ad", 1 / 3),
                bp.get("rl", 1 / 3),
                n_b=cfg.get("n_b", 1),
            )
        plan = decoy_mod.make_plan(
            protocol,
            cfg["signal_intensity"],
            cfg.get("decoy_intensities", []),
            signal_probs=cfg.get("signal_probs"),
            p_gen=cfg.get("p_gen", 0.5),
            p_test_intensity=cfg.get("decoy_probs"),
        )
        ch_raw = dict(cfg.get("channel", {}))
        if "detector_efficiencies" in ch_raw and ch_raw["detector_efficiencies"] is not None:
            ch_raw["detector_efficiencies"] = tuple(ch_raw["detector_efficiencies"])
        ch = channel_mod.ChannelModel(**ch_raw)
        tol = cfg.get("tolerances", {})
        options = keyrate_mod.KeyRateOptions(
            use_sdp_decoy=cfg.get("use_sdp_decoy", True),
            n_ph=cfg.get("n_ph", 10),
            vacuum_term=cfg.get("vacuum_term", False),
            f_ec=cfg.get("f_ec", 1.0),
            fw_max_iter=tol.get("fw_max_iter", 300),
            fw_gap_tol=tol.get("fw_gap", 1e-6),
            decoy_tol=tol.get("decoy_gap", 1e-9),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc))
    return protocol, plan, ch, options


def parse_range(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise click.UsageError("--distances must be start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise click.UsageError("--distances must contain numbers, start:stop:step")
    if step <= 0 or stop < start:
        raise click.UsageError("--distances needs step > 0 and stop >= start")
    out = []
    d = start
    while d <= stop + 1e-9:
        out.append(round(d, 9))
        d += step
    return out


@click.group()
def main():
    """Certified decoy-state QKD key rates and receiver analysis."""


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


_CSV_HEADER = "distance_km,key_rate,pr1,y1_gap_max,fw_gap,p_l_used"


def _csv_line(rep) -> str:
    def num(v):
        if v is None:
            return ""
        return format(float(v), ".12e")

    pr1 = rep.pr_n.get(1, float("nan")) if rep.pr_n else float("nan")
    return ",".join(
        [
            format(float(rep.distance_km), ".6f"),
            num(rep.rate),
            num(pr1),
            num(rep.y1_gap_max),
            num(rep.fw_gap),
            num(rep.p_l_used) if rep.p_l_used is not None else "",
        ]
    )


@main.command("scan")
@click.argument("config_path", type=click.Path(exists=False))
@click.option("--distances", required=True, help="start:stop:step in km")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--stats", "stats_path", type=click.Path(), default=None,
              help="replay statistics from a JSON record instead of simulating")
def cmd_scan(config_path, distances, out_path, stats_path):
    """Key-rate-vs-distance scan; writes CSV to OUT and JSON next to it."""
    try:
        cfg = load_config(config_path)
        protocol, plan, ch, options = build_objects(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    dists = parse_range(distances)

    reports = []
    exit_code = EXIT_OK
    if stats_path is not None:
        try:
            with open(stats_path) as fh:
                stats = decoy_mod.ObservedStats.from_record(json.load(fh))
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            click.echo(f"config error: bad stats file: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        for d in dists:
            rep = _replayed_point(protocol, plan, stats, options, d)
            reports.append(rep)
    else:
        reports = keyrate_mod.scan(protocol, plan, ch, dists, options=options)

    for rep in reports:
        if rep.error:
            exit_code = (
                EXIT_INFEASIBLE if "Infeasible" in rep.error else EXIT_SOLVER
            )
        elif rep.fw_gap > max(10 * options.fw_gap_tol, 1e-4) and rep.rate > 0:
            exit_code = max(exit_code, EXIT_SOLVER)

    lines = [_CSV_HEADER] + [_csv_line(r) for r in reports]
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_json(
        str(out_path) + ".json",
        {"config": cfg, "points": [r.to_record() for r in reports]},
    )
    sys.exit(exit_code)


def _replayed_point(protocol, plan, stats, options, d):
    try:
        rep = keyrate_mod.keyrate(protocol, plan, stats=stats, options=options)
    except (keyrate_mod.InfeasibleSetError, decoy_mod.InfeasibleStatisticsError) as exc:
        rep = keyrate_mod.KeyRateReport(
            rate=float("nan"), pr_n={}, fw_primal=float("nan"),
            fw_bound=float("nan"), fw_gap=float("nan"), fw_iterations=0,
            p_pass=float("nan"), delta_leak=float("nan"),
            y1_gap_max=float("nan"), p_l_used=None,
            yield_bounds=decoy_mod.YieldBounds(), vacuum_rate=None,
            config={"protocol": protocol.name},
            error=f"{type(exc).__name__}: {exc}",
        )
    rep.distance_km = float(d)
    return rep


@main.command("bounds")
@click.argument("config_path", type=click.Path(exists=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--compare-lp", is_flag=True, help="include LP bounds side by side")
def cmd_bounds(config_path, out_path, compare_lp):
    """Yield bounds only (no key-rate optimization)."""
    try:
        cfg = load_config(config_path)
        protocol, plan, ch, options = build_objects(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    stats = channel_mod.simulate_stats(protocol, plan, ch)
    exit_code = EXIT_OK
    payload = {"config": cfg}
    targets = [
        (x, y, n)
        for x in protocol.signals
        for y in protocol.outcomes
        for n in (0, 1)
    ]
    try:
        if options.use_sdp_decoy:
            yb = decoy_mod.sdp_yield_bounds(
                stats, plan, options.n_ph, protocol, targets=targets,
                tol_gap=options.decoy_tol,
            )
        else:
            yb = decoy_mod.lp_yield_table(
                stats, plan, options.n_ph, targets=targets,
                tol_gap=options.decoy_tol,
            )
        payload["bounds"] = yb.to_record()
        if compare_lp and options.use_sdp_decoy:
            payload["lp_bounds"] = decoy_mod.lp_yield_table(
                stats, plan, options.n_ph, targets=targets,
                tol_gap=options.decoy_tol,
            ).to_record()
    except decoy_mod.InfeasibleStatisticsError as exc:
        payload["error"] = str(exc)
        payload["violations"] = getattr(exc, "violations", [])
        exit_code = EXIT_INFEASIBLE
    _write_json(out_path, payload)
    sys.exit(exit_code)


@main.command("squash")
@click.argument("config_path", type=click.Path(exists=False), required=False)
@click.option("--g-file", type=click.Path(), default=None,
              help="JSON detector-matrix record (used instead of the config protocol)")
@click.option("--n-in", type=int, default=None,
              help="signal-mode count when --g-file holds a full unitary")
@click.option("--nb", "n_b", type=int, default=1, show_default=True)
@click.option("--n-max", type=int, default=None, help="largest photon number tabulated")
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_squash(config_path, g_file, n_in, n_b, n_max, out_path):
    """Subspace-estimation constants for a receiver."""
    payload = {}
    try:
        if g_file is not None:
            with open(g_file) as fh:
                rec = json.load(fh)
            if isinstance(rec, dict) and "rows" in rec:
                mat = ModeMatrix.from_record(rec).entries
                if rec.get("lossless", False):
                    g = mat
                else:
                    if "n_detected" in rec:
                        # characterization output: pad the reduced loss
                        # block to the standard detected+loss shape
                        nd = int(rec["n_detected"])
                        pad = 2 * nd - mat.shape[0]
                        mat = np.vstack(
                            [mat, np.zeros((pad, mat.shape[1]), dtype=complex)]
                        )
                    dec = squasher.decompose_lossy(mat)
                    g, payload["decomposition_residual"] = dec.v_d, dec.residual
            else:
                mat = np.array(
                    [[complex(re, im) for re, im in row] for row in rec], dtype=complex
                )
                if mat.shape[0] == mat.shape[1] and n_in is not None:
                    dec = squasher.decompose_lossy(mat, n_in=n_in)
                    g, payload["decomposition_residual"] = dec.v_d, dec.residual
                else:
                    # raw rectangular arrays are taken as lossless receivers
                    g = mat
        elif config_path:
            cfg = load_config(config_path)
            protocol, _, _, _ = build_objects(cfg)
            if protocol.detector_matrix is None:
                raise ConfigError("protocol has no passive detector matrix")
            g = protocol.detector_matrix
        else:
            raise ConfigError("provide a config or --g-file")
        n_max = n_max or (n_b + 3)
        rep = squasher.c_constants(g, n_max).with_cutoff(n_b)
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    payload.update(
        {
            "n_b": rep.n_b,
            "c": {str(n): v for n, v in rep.c.items()},
            "c_geq": rep.c_geq,
            "best_partitions": {
                str(n): [list(b) for b in p.blocks]
                for n, p in rep.best_partition.items()
            },
        }
    )
    _write_json(out_path, payload)
    sys.exit(EXIT_OK)


@main.command("characterize")
@click.option("--probes", "probes_path", required=True, type=click.Path())
@click.option("--clicks", "clicks_path", required=True, type=click.Path())
@click.option("--p-dark", type=float, default=0.0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_characterize(probes_path, clicks_path, p_dark, out_path):
    """Recover a detector matrix from coherent-probe click data."""
    try:
        with open(probes_path) as fh:
            probes = [
                np.array([complex(re, im) for re, im in row]) for row in json.load(fh)
            ]
        with open(clicks_path) as fh:
            clicks = np.array(json.load(fh), dtype=float)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        click.echo(f"config error: cannot read inputs: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        res = squasher.characterize_detector(probes, clicks, p_dark=p_dark)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except squasher.IllPosedCharacterizationError as exc:
        click.echo(f"characterization failed: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    payload = res.matrix.to_record()
    payload["residual"] = res.residual
    payload["n_detected"] = int(res.detected.shape[0])
    payload["row_phase_ambiguous"] = list(res.row_phase_ambiguous)
    _write_json(out_path, payload)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
