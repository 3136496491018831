"""Band structure container shared by the Jacobi and continuum solvers."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .intervals import Interval, IntervalSet


class NumericalFailure(RuntimeError):
    """A numerical routine could not reach its accuracy target."""


@dataclass(frozen=True)
class BandStructure:
    """Bands, open gaps and labeled edges of a periodic operator.

    ``edges`` holds ``(energy, label)`` pairs with label ``+2`` or ``-2``
    according to which of ``Δ = ±2`` the edge solves.  A closed gap
    contributes its point twice, once as the top of the lower band and once
    as the bottom of the upper one.  ``clipped_top`` is set when the last
    band was cut off by an energy window.
    """

    bands: IntervalSet
    gaps: tuple[Interval, ...]
    edges: tuple[tuple[float, int], ...]
    closed_gap_points: tuple[float, ...] = ()
    clipped_top: bool = False
    window: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def floquet_bands(self) -> list[Interval]:
        """Bands ``[α_j, β_j]`` between consecutive solutions of ``Δ = ±2``.

        Unlike :attr:`bands`, closed gaps are kept as separators.  A clipped
        top band is not included.
        """
        e = [E for E, _ in self.edges]
        return [Interval(e[k], e[k + 1]) for k in range(0, len(e) - 1, 2)]

    def edges_with_label(self, label: int) -> list[float]:
        return [E for E, lab in self.edges if lab == label]

    def gap_lengths(self) -> list[float]:
        return [g.length for g in self.gaps]

    def to_dict(self) -> dict:
        return {
            "parts": self.bands.to_list(),
            "gaps": [[g.lo, g.hi] for g in self.gaps],
            "edges": [[E, lab] for E, lab in self.edges],
            "closed_gap_points": list(self.closed_gap_points),
            "clipped_top": self.clipped_top,
            "window": self.window,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "BandStructure":
        return cls(
            bands=IntervalSet.from_json(d),
            gaps=tuple(Interval(lo, hi) for lo, hi in d.get("gaps", [])),
            edges=tuple((float(E), int(lab)) for E, lab in d.get("edges", [])),
            closed_gap_points=tuple(d.get("closed_gap_points", [])),
            clipped_top=bool(d.get("clipped_top", False)),
            window=d.get("window"),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["band_index", "lo", "hi", "length"])
        for k, p in enumerate(self.bands.parts, start=1):
            w.writerow([k, repr(p.lo), repr(p.hi), repr(p.hi - p.lo)])
        return buf.getvalue()


    def edge_table_csv(self) -> str:
        """Floquet bands with the ``Δ = ±2`` label of each edge."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["band_index", "lo", "hi", "length", "lo_label", "hi_label"])
        e = self.edges
        for k in range(0, len(e) - 1, 2):
            (lo, la), (hi, lb) = e[k], e[k + 1]
            w.writerow([k // 2 + 1, repr(lo), repr(hi), repr(hi - lo), la, lb])
        if len(e) % 2:
            w.writerow([len(e) // 2 + 1, repr(e[-1][0]), repr(self.window),
                        repr(self.window - e[-1][0]), e[-1][1], "window"])
        return buf.getvalue()


def assemble(edges: list[tuple[float, int]], closed: list[float],
             clipped_top: float | None = None, window: float | None = None,
             meta: dict | None = None) -> BandStructure:
    """Build a :class:`BandStructure` from sorted, paired band edges.

    ``edges`` must alternate bottom/top of each Floquet band.  ``clipped_top``
    closes an unpaired trailing edge at the window boundary.
    """
    pairs = [(edges[k][0], edges[k + 1][0]) for k in range(0, len(edges) - 1, 2)]
    if len(edges) % 2:
        if clipped_top is None:
            raise NumericalFailure("odd number of band edges without a window")
        pairs.append((edges[-1][0], clipped_top))
    bands = IntervalSet.of(pairs)
    gaps = tuple(bands.gaps())
    return BandStructure(bands, gaps, tuple(edges), tuple(closed),
                         clipped_top=len(edges) % 2 == 1, window=window,
                         meta=meta or {})
