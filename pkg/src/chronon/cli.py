"""Command-line front end.

    chronon radar --k 1 --ne 100 --replicates 1000000 --seed 7 --out results/
    chronon species --list

Exit status: 0 on success, 2 on invalid input, 3 when outputs cannot be
written.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .core import BUILTIN_SPECIES, ChrononError, get_species, k_from_velocity, load_species
from .ensemble import EnsembleSummary, ExperimentSpec, format_number, run_ensemble, worker_count

log = logging.getLogger("chronon")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3

COMMAND_KINDS = {
    "radar": "velocity",
    "lorentz": "two_observer",
    "uncertainty": "uncertainty",
    "spread": "spread",
    "gof": "gof",
}
FORMATS = ("csv", "json")


@dataclass
class RunConfig:
    command: str
    spec: ExperimentSpec | None
    out: Path | None = None
    formats: tuple[str, ...] = FORMATS
    verbosity: int = 0
    species_file: str | None = None
    argv: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        """Everything that determines the results; output location lives in meta.json."""
        return {
            "command": self.command,
            **self.spec.to_dict(),
            "species_file": self.species_file,
            "formats": list(self.formats),
        }


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chronon", description="Discrete-time radar Monte Carlo experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    motion = common.add_mutually_exclusive_group()
    motion.add_argument("--k", type=float, help="k-factor (default 1)")
    motion.add_argument("--v", type=float, help="velocity in units of c, converted to k")
    common.add_argument("--ne", type=int, default=100, help="emission interval in chronons")
    common.add_argument("--replicates", type=int, default=100_000)
    common.add_argument("--seed", type=int, required=True)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--format", dest="formats", action="append", choices=FORMATS,
                        help="output format(s); repeatable, default both")
    common.add_argument("--species-file", help="INI file with extra species")
    common.add_argument("--verbose", "-V", action="count", default=0)

    p = sub.add_parser("radar", parents=[common], help="velocity estimator ensemble")
    p = sub.add_parser("lorentz", parents=[common], help="two-observer experiment")
    p.add_argument("--nr-prime", type=int, required=True, help="B's echo count N_r'")
    p = sub.add_parser("uncertainty", parents=[common], help="energy spread and uncertainty product")
    mass = p.add_mutually_exclusive_group(required=True)
    mass.add_argument("--mass", type=float, help="rest mass in natural units")
    mass.add_argument("--species", help="species name from the table")
    p = sub.add_parser("spread", parents=[common], help="position spread about the classical path")
    p.add_argument("--ne-grid", type=int, nargs="+", help="several emission intervals")
    p = sub.add_parser("gof", parents=[common], help="chi-square test of the sampler")
    p.add_argument("--scale", type=float, default=1.0,
                   help="draw from scale * k^2 n_e while testing against k^2 n_e")

    sp = sub.add_parser("species", help="show the particle species table")
    sp.add_argument("--list", action="store_true", help="list all species (default)")
    sp.add_argument("--species-file", help="INI file with extra species")
    return parser


def _species_table(species_file: str | None) -> dict:
    table = dict(BUILTIN_SPECIES)
    if species_file:
        table.update(load_species(species_file))
    return table


def parse_args(argv=None) -> RunConfig:
    """Parse ``argv`` into a validated RunConfig (exits with status 2 on bad flags)."""
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = build_parser().parse_args(argv)
    if ns.command == "species":
        return RunConfig("species", None, species_file=ns.species_file, argv=argv)
    k = k_from_velocity(ns.v) if ns.v is not None else (1.0 if ns.k is None else ns.k)
    extra = {}
    if ns.command == "lorentz":
        extra["nr_prime"] = ns.nr_prime
    elif ns.command == "uncertainty":
        if ns.mass is not None:
            extra["mass"] = ns.mass
        else:
            extra["species"] = get_species(ns.species, _species_table(ns.species_file))
    elif ns.command == "spread" and ns.ne_grid:
        extra["ne_grid"] = list(ns.ne_grid)
    elif ns.command == "gof" and ns.scale != 1.0:
        extra["sample_scale"] = ns.scale
    spec = ExperimentSpec(COMMAND_KINDS[ns.command], k, ns.ne, ns.replicates, ns.seed, extra)
    spec.validate()
    formats = tuple(dict.fromkeys(ns.formats)) if ns.formats else FORMATS
    return RunConfig(ns.command, spec, ns.out, formats, ns.verbose, ns.species_file, argv)


def _flat_rows(summary: EnsembleSummary, config: RunConfig):
    for key, value in config.to_dict().items():
        if isinstance(value, dict):
            for sub, v in value.items():
                yield "config", key, sub, v
        else:
            yield "config", key, "", value
    for s in summary.statistics:
        for fld in ("estimate", "stderr", "oracle", "prediction", "excluded"):
            yield "statistic", s.name, fld, getattr(s, fld)
    for key, value in summary.counts.items():
        yield "count", key, "", value
    for key, value in summary.derived.items():
        yield "derived", key, "", value
    for key, t in summary.tests.items():
        yield "test", key, "statistic", t.statistic
        yield "test", key, "dof", t.dof
        yield "test", key, "p_value", t.p_value
    for name, table in summary.tables.items():
        for i, row in enumerate(table.rows):
            for col, value in zip(table.columns, row):
                yield f"table:{name}", str(i), col, value


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        return " ".join(_render(v) for v in value)
    return format_number(value)


def render_csv(summary: EnsembleSummary, config: RunConfig) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["section", "name", "field", "value"])
    for section, name, fld, value in _flat_rows(summary, config):
        writer.writerow([section, name, fld, _render(value)])
    return buf.getvalue()


def render_plot(summary: EnsembleSummary, config: RunConfig) -> str:
    table = summary.tables[summary.plot_table]
    lines = [f"# chronon {config.command}: {summary.plot_table}",
             "# config: " + json.dumps(config.to_dict(), sort_keys=True, default=str),
             "# " + " ".join(table.columns)]
    for row in table.rows:
        lines.append(" ".join("nan" if v is None else format_number(v) for v in row))
    return "\n".join(lines) + "\n"


def render_summary(summary: EnsembleSummary, config: RunConfig) -> str:
    return summary.to_json({"config": config.to_dict()})


def write_outputs(summary: EnsembleSummary, config: RunConfig, workers: int | None = None) -> list[Path]:
    """Write summary.json, data.csv, plot.dat and meta.json into config.out."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if "json" in config.formats:
        files["summary.json"] = render_summary(summary, config)
    if "csv" in config.formats:
        files["data.csv"] = render_csv(summary, config)
    files["plot.dat"] = render_plot(summary, config)
    meta = {
        "created": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "output_dir": str(out),
        "workers": worker_count() if workers is None else workers,
        "argv": config.argv,
        "config": config.to_dict(),
    }
    files["meta.json"] = json.dumps(meta, indent=2, default=str) + "\n"
    written = []
    for name, text in files.items():
        path = out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        written.append(path)
    return written


def species_listing(table: dict) -> str:
    header = ("name", "mass_MeV", "compton_m", "n_s_per_s", "time_element_s",
              "length_element_m", "8*lambda_c/2pi_m")
    rows = [header]
    for sp in table.values():
        if sp.massive:
            rows.append((sp.name, f"{sp.rest_mass:.6g}", f"{sp.compton_wavelength:.6g}",
                         f"{sp.chronon_rate_ns:.6g}", f"{sp.time_element:.6g}",
                         f"{sp.length_element:.6g}",
                         f"{8 * sp.compton_wavelength / (2 * 3.141592653589793):.6g}"))
        else:
            rows.append((sp.name, "0", "-", "0", "-", "-", "-"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows) + "\n"


def main(argv=None) -> int:
    try:
        config = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ChrononError, FileNotFoundError) as exc:
        print(f"chronon: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if config.verbosity > 1 else
                        logging.INFO if config.verbosity else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if config.command == "species":
        sys.stdout.write(species_listing(_species_table(config.species_file)))
        return EXIT_OK
    try:
        log.info("running %s with %d replicates", config.spec.kind, config.spec.replicates)
        workers = worker_count()
        summary = run_ensemble(config.spec, workers)
    except ChrononError as exc:
        print(f"chronon: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(summary.to_text())
    if config.out is not None:
        try:
            paths = write_outputs(summary, config, workers)
        except OSError as exc:
            print(f"chronon: cannot write outputs: {exc}", file=sys.stderr)
            return EXIT_IO
        for p in paths:
            log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
