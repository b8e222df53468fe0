import io
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, TextIO, Tuple, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from app.core.exceptions import IntegralParseError, MissingInputError, SidecarMismatchError
from app.core.units import DUPLICATE_TOL, PRINT_DIGITS
from app.schemas import IntegralSet

logger = logging.getLogger(__name__)

TextSource = Union[str, TextIO, Iterable[str]]

_HEADER_FIELD = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([^=]*?)(?=,?\s*[A-Za-z_][A-Za-z0-9_]*\s*=|$)")
_HEADER_END = ("&END", "/END", "/")
_DIPOLE_AXES = {"x": 0, "y": 1, "z": 2}


def _lines(source: TextSource) -> List[str]:
    if isinstance(source, str):
        return source.splitlines()
    if isinstance(source, (io.TextIOBase, io.StringIO)) or hasattr(source, "read"):
        return source.read().splitlines()
    return [line.rstrip("\n") for line in source]


def _read_utf8(path: str) -> str:
    content = Path(path).read_bytes()
    try:
        return content.decode("utf-8")
    except UnicodeDecodeError as e:
        raise IntegralParseError(
            f"{path} is not UTF-8 text", line_number=content[:e.start].count(b"\n") + 1,
            details={"filename": path, "byte_offset": e.start},
        )


def _two_body_slots(p: int, q: int, r: int, s: int) -> List[Tuple[int, int, int, int]]:
    """All index tuples tied to (pq|rs) by the 8-fold chemists' symmetry."""
    return [
        (p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
        (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p),
    ]


class IntegralParser:
    """FCIDUMP and dipole-sidecar reader/writer."""

    def parse_fcidump(self, source: TextSource) -> IntegralSet:
        lines = _lines(source)
        header, body_start = self._read_header(lines)

        try:
            n_orb = int(header["NORB"])
            n_elec = int(header.get("NELEC", "0"))
            two_sz = int(header.get("MS2", "0"))
        except KeyError:
            raise IntegralParseError("header lacks NORB", line_number=1)
        except ValueError as e:
            raise IntegralParseError(f"non-integer header value ({e})", line_number=1)

        if n_orb < 1:
            raise IntegralParseError(f"NORB must be positive, got {n_orb}", line_number=1)

        orbsym = None
        if "ORBSYM" in header:
            logger.warning("ORBSYM present in FCIDUMP header; point-group labels are ignored")
            orbsym = [int(x) for x in header["ORBSYM"].replace(",", " ").split() if x.strip()]

        h = np.zeros((n_orb, n_orb))
        v = np.zeros((n_orb, n_orb, n_orb, n_orb))
        h_set = np.zeros((n_orb, n_orb), dtype=bool)
        v_set = np.zeros((n_orb, n_orb, n_orb, n_orb), dtype=bool)
        e_frozen: Optional[float] = None
        n_one, n_two = 0, 0

        for line_number, raw in enumerate(lines[body_start:], start=body_start + 1):
            fields = raw.split()
            if not fields:
                continue
            if len(fields) != 5:
                raise IntegralParseError(
                    f"expected 'value p q r s', got {len(fields)} fields", line_number=line_number
                )
            try:
                value = float(fields[0].replace("D", "E").replace("d", "e"))
                p, q, r, s = (int(x) for x in fields[1:])
            except ValueError:
                raise IntegralParseError(f"malformed record '{raw.strip()}'", line_number=line_number)

            for idx in (p, q, r, s):
                if not 0 <= idx <= n_orb:
                    raise IntegralParseError(
                        f"index {idx} out of range 1..{n_orb}", line_number=line_number
                    )

            if p and q and r and s:
                for slot in _two_body_slots(p - 1, q - 1, r - 1, s - 1):
                    self._store(v, v_set, slot, value, line_number)
                n_two += 1
            elif p and q and not r and not s:
                self._store(h, h_set, (p - 1, q - 1), value, line_number)
                self._store(h, h_set, (q - 1, p - 1), value, line_number)
                n_one += 1
            elif not (p or q or r or s):
                if e_frozen is not None and abs(e_frozen - value) > DUPLICATE_TOL:
                    raise IntegralParseError(
                        f"conflicting scalar records {e_frozen!r} and {value!r}", line_number=line_number
                    )
                e_frozen = value
            elif p and not q and not r and not s:
                logger.debug(f"Skipping orbital-energy record on line {line_number}")
            else:
                raise IntegralParseError(
                    f"index pattern ({p} {q} {r} {s}) is not a recognised record", line_number=line_number
                )

        logger.info(
            f"Parsed FCIDUMP: NORB={n_orb}, NELEC={n_elec}, MS2={two_sz}, "
            f"{n_one} one-body and {n_two} two-body records"
        )

        try:
            return IntegralSet(
                n_orb=n_orb,
                n_elec=n_elec,
                two_sz=two_sz,
                e_frozen=e_frozen or 0.0,
                h=h,
                v=v,
                orbsym=orbsym,
            )
        except PydanticValidationError as e:
            raise IntegralParseError(f"integral set violates its invariants: {e.errors()[0]['msg']}")

    def parse_dipole_sidecar(self, source: TextSource, base: IntegralSet) -> IntegralSet:
        """Read `axis value p q` records and a `CORE p1 p2 ...` record onto `base`.

        The sidecar must declare `NORB=<n>` matching the base integral set.
        """
        n_orb = base.n_orb
        dipole = np.zeros((3, n_orb, n_orb))
        d_set = np.zeros((3, n_orb, n_orb), dtype=bool)
        core: List[int] = []
        declared_norb: Optional[int] = None

        for line_number, raw in enumerate(_lines(source), start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            keyword = fields[0].upper()

            if keyword.startswith("NORB"):
                match = re.match(r"NORB\s*=\s*(\d+)", text, re.IGNORECASE)
                if not match:
                    raise IntegralParseError(f"malformed NORB record '{text}'", line_number=line_number)
                declared_norb = int(match.group(1))
                if declared_norb != n_orb:
                    raise SidecarMismatchError("NORB", declared_norb, n_orb)
                continue

            if keyword == "CORE":
                try:
                    indices = [int(x) for x in fields[1:]]
                except ValueError:
                    raise IntegralParseError(f"non-integer core index in '{text}'", line_number=line_number)
                for c in indices:
                    if not 1 <= c <= n_orb:
                        raise IntegralParseError(
                            f"core index {c} out of range 1..{n_orb}", line_number=line_number
                        )
                core.extend(c for c in indices if c not in core)
                continue

            axis = _DIPOLE_AXES.get(fields[0].lower())
            if axis is None:
                raise IntegralParseError(f"invalid axis token '{fields[0]}'", line_number=line_number)
            if len(fields) != 4:
                raise IntegralParseError("expected 'axis value p q'", line_number=line_number)
            try:
                value = float(fields[1])
                p, q = int(fields[2]), int(fields[3])
            except ValueError:
                raise IntegralParseError(f"malformed record '{text}'", line_number=line_number)
            for idx in (p, q):
                if not 1 <= idx <= n_orb:
                    raise IntegralParseError(f"index {idx} out of range 1..{n_orb}", line_number=line_number)
            self._store(dipole, d_set, (axis, p - 1, q - 1), value, line_number)
            self._store(dipole, d_set, (axis, q - 1, p - 1), value, line_number)

        if declared_norb is None:
            raise IntegralParseError("sidecar does not declare NORB")

        logger.info(f"Parsed dipole sidecar: core orbitals {sorted(core)}")
        return base.model_copy(update={"dipole": dipole, "core_orbitals": sorted(core)})

    def write_fcidump(self, integrals: IntegralSet) -> str:
        n = integrals.n_orb
        width = len(str(n))
        fmt = f" {{0: .{PRINT_DIGITS - 1}E}} {{1:>{width}d}} {{2:>{width}d}} {{3:>{width}d}} {{4:>{width}d}}\n"
        out = io.StringIO()
        out.write(f" &FCI NORB={n},NELEC={integrals.n_elec},MS2={integrals.two_sz},\n")
        out.write(" &END\n")

        v = integrals.v
        for p in range(n):
            for q in range(p + 1):
                pq = p * (p + 1) // 2 + q
                for r in range(n):
                    for s in range(r + 1):
                        if pq < r * (r + 1) // 2 + s:
                            continue
                        value = v[p, q, r, s]
                        if value != 0.0:
                            out.write(fmt.format(value, p + 1, q + 1, r + 1, s + 1))
        for p in range(n):
            for q in range(p + 1):
                if integrals.h[p, q] != 0.0:
                    out.write(fmt.format(integrals.h[p, q], p + 1, q + 1, 0, 0))
        out.write(fmt.format(integrals.e_frozen, 0, 0, 0, 0))
        return out.getvalue()

    def write_dipole_sidecar(self, integrals: IntegralSet) -> str:
        lines = [f"NORB={integrals.n_orb}"]
        if integrals.core_orbitals:
            lines.append("CORE " + " ".join(str(c) for c in integrals.core_orbitals))
        if integrals.dipole is not None:
            for axis, label in enumerate("xyz"):
                d = integrals.dipole[axis]
                for p in range(integrals.n_orb):
                    for q in range(p + 1):
                        if d[p, q] != 0.0:
                            lines.append(f"{label} {d[p, q]:.{PRINT_DIGITS - 1}E} {p + 1} {q + 1}")
        return "\n".join(lines) + "\n"

    def read_files(self, fcidump_path: str, dipole_path: Optional[str] = None) -> IntegralSet:
        for name, path in (("fcidump", fcidump_path), ("dipole", dipole_path)):
            if path and not Path(path).is_file():
                raise MissingInputError(name, required_by=f"path {path}")
        integrals = self.parse_fcidump(_read_utf8(fcidump_path))
        if dipole_path:
            integrals = self.parse_dipole_sidecar(_read_utf8(dipole_path), integrals)
        return integrals

    def _read_header(self, lines: List[str]) -> Tuple[Dict[str, str], int]:
        if not lines or not lines[0].strip().upper().startswith("&FCI"):
            raise IntegralParseError("file does not start with an &FCI namelist", line_number=1)

        first = lines[0].strip()[4:].rstrip()
        chunks = [first]
        end = None
        if first.endswith("/") or first.upper().endswith("&END"):
            # single-line namelist
            chunks[0] = first[:-1] if first.endswith("/") else first[:-4]
            end = 0
        else:
            for i, raw in enumerate(lines[1:], start=1):
                token = raw.strip()
                if token.upper() in _HEADER_END or token.upper().startswith("&END"):
                    end = i
                    break
                chunks.append(token)
        if end is None:
            raise IntegralParseError("namelist header is not terminated by &END or /", line_number=1)

        text = " ".join(chunks)
        header = {}
        for key, value in _HEADER_FIELD.findall(text):
            header[key.upper()] = value.strip().rstrip(",").strip()
        if "NORB" not in header:
            raise IntegralParseError("header lacks NORB", line_number=1)
        return header, end + 1

    @staticmethod
    def _store(array: np.ndarray, mask: np.ndarray, slot: Tuple[int, ...], value: float, line_number: int) -> None:
        if mask[slot] and abs(array[slot] - value) > DUPLICATE_TOL:
            raise IntegralParseError(
                f"conflicting duplicate entry for {tuple(i + 1 for i in slot)}: "
                f"{array[slot]!r} vs {value!r}",
                line_number=line_number,
            )
        array[slot] = value
        mask[slot] = True


integral_parser = IntegralParser()
