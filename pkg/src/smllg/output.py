"""CSV, manifest and plot-script writers.

Numbers are written with 17 significant digits and no locale so that
identical runs give byte-identical files.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .config import SimConfig, format_config
from .ensemble import TRACE_COLUMNS, EnsembleResult, StudyRow


def fmt(x) -> str:
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    return format(float(x), ".17g")


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    Path(path).write_text(buf.getvalue())


def write_energy_csv(path, result: EnsembleResult) -> None:
    """One block per retained path (``path`` = index) then the mean (``path`` = mean)."""
    rows = []
    for i, table in enumerate(result.sample_paths):
        rows += [[str(i)] + [fmt(v) for v in r] for r in table]
    rows += [["mean"] + [fmt(v) for v in r] for r in result.mean_trace]
    _write_rows(path, ("path",) + TRACE_COLUMNS, rows)


def write_paths_csv(path, result: EnsembleResult) -> None:
    rows = [[str(i), str(seed[0]), str(seed[1]), fmt(e)]
            for i, (seed, e) in enumerate(zip(result.seeds, result.sphere_error_sq))]
    _write_rows(path, ("path", "base_seed", "index", "sphere_error_sq"), rows)


def write_error_csv(path, rows: Sequence[StudyRow], wallclock: bool = True) -> None:
    out = [[fmt(r.n), fmt(r.k), fmt(r.mean_sphere_error_sq), fmt(r.L),
            fmt(r.wallclock if wallclock else 0.0)] for r in rows]
    _write_rows(path, ("n", "k", "mean_sphere_error_sq", "L", "wallclock_s"), out)


def write_manifest(path, config: SimConfig, command: str, extra: dict = None) -> None:
    """Resolved config in the input format, preceded by comment lines.

    The non-comment part is itself a valid config file.
    """
    lines = [f"# smllg {__version__}", f"# command: {command}",
             f"# seeds: path i uses (base_seed={config.base_seed}, i) for i < L={config.L}"]
    for key, val in (extra or {}).items():
        lines.append(f"# {key}: {val}")
    Path(path).write_text("\n".join(lines) + "\n" + format_config(config))


PLOT_SCRIPT = """\
# gnuplot script: regenerates the error plot and the three energy plots.
# usage: gnuplot plot.gp   (run inside the output directory)
set datafile separator ','
set terminal pngcairo size 1000,600
set key outside

if (system("test -f error.csv && echo 1") eq "1") {
    set output 'error.png'
    set title 'E[E_{h,k}^2] against h'
    set logscale xy
    set xlabel 'h = 1/n'
    set ylabel 'E[E^2_{h,k}]'
    plot 'error.csv' every ::1 using (1.0/$1):3 with linespoints title 'all (n, k)'
    unset logscale
}

if (system("test -f energy.csv && echo 1") eq "1") {
    nblocks = int(system("awk -F, 'NR>1 && $1!=\\"mean\\" {print $1}' energy.csv | sort -u | wc -l"))
    set xlabel 't'
    array cols[3] = [3, 5, 7]
    array names[3] = ['exchange_sq', 'field_sq', 'total']
    array files[3] = ['exchange.png', 'field.png', 'total.png']
    do for [c=1:3] {
        set output files[c]
        set title names[c].' : expectation and individual paths'
        plot for [p=0:nblocks-1] 'energy.csv' using ($1==p ? $2 : 1/0):cols[c] \\
                 with lines title sprintf('path %d', p), \\
             'energy.csv' using (strcol(1) eq 'mean' ? $2 : 1/0):cols[c] \\
                 with lines lw 3 title 'mean'
    }
}
"""


def write_plot_script(path) -> None:
    Path(path).write_text(PLOT_SCRIPT)
