"""Admin exports of the four registry datasets as CSV, XML, or plain text.

Each dataset kind has a fixed column tuple, and the four tuples are pairwise
distinct so ``parse`` can recover the kind from the header alone. Cells are
arbitrary text except for control characters: newlines and tabs are allowed,
carriage returns and the rest are refused at construction, which is what
makes the round trip ``parse(export(d, f), f) == d`` hold in every format.

The TXT format is a fixed-width table. Because parsing strips the right
padding of every cell, cell text is escaped first: backslash doubles,
newline becomes ``\\n``, and each *trailing* space becomes ``\\s`` so it
survives the strip. Column widths are recovered from the dash separator
line, whose runs mirror the padded widths exactly.
"""

from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import date as _date

DATASET_MEDICATION = "medication"
DATASET_DOCTORS = "doctors"
DATASET_LABORATORY = "laboratory"
DATASET_PATIENTS = "patients"
DATASET_KINDS = (
    DATASET_MEDICATION,
    DATASET_DOCTORS,
    DATASET_LABORATORY,
    DATASET_PATIENTS,
)

COLUMNS: dict[str, tuple[str, ...]] = {
    DATASET_MEDICATION: ("id", "name", "stock"),
    DATASET_DOCTORS: ("address", "name", "status"),
    DATASET_LABORATORY: (
        "id",
        "test_name",
        "parameter",
        "unit",
        "reference_min",
        "reference_max",
    ),
    # registered_at keeps the patient column set distinct from the doctors'.
    DATASET_PATIENTS: ("address", "name", "status", "registered_at"),
}
_KIND_BY_COLUMNS = {columns: kind for kind, columns in COLUMNS.items()}

FORMAT_CSV = "csv"
FORMAT_XML = "xml"
FORMAT_TXT = "txt"
EXPORT_FORMATS = (FORMAT_CSV, FORMAT_XML, FORMAT_TXT)

MIME_TYPES = {
    FORMAT_CSV: "text/csv",
    FORMAT_XML: "application/xml",
    FORMAT_TXT: "text/plain",
}

# Characters that would corrupt at least one of the three framings.
_BANNED_EXTRA = frozenset("\x7f\x85  ")


class ExportError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)
        self.line = line
        self.column = column


def _check_cell(value, kind_hint: str) -> None:
    if not isinstance(value, str):
        raise ExportError(f"{kind_hint}: cell values must be strings, got {type(value).__name__}")
    for ch in value:
        if (ord(ch) < 32 and ch not in "\n\t") or ch in _BANNED_EXTRA:
            raise ExportError(f"{kind_hint}: control character {ch!r} not allowed in cells")


@dataclass
class Dataset:
    kind: str
    rows: list[dict[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in COLUMNS:
            raise ExportError(f"unknown dataset kind {self.kind!r}")
        columns = COLUMNS[self.kind]
        for i, row in enumerate(self.rows):
            if tuple(row.keys()) != columns:
                raise ExportError(
                    f"{self.kind} row {i}: columns {tuple(row.keys())} != {columns}"
                )
            for value in row.values():
                _check_cell(value, f"{self.kind} row {i}")

    @property
    def columns(self) -> tuple[str, ...]:
        return COLUMNS[self.kind]


def export_filename(kind: str, fmt: str, on: _date) -> str:
    return f"{kind}_{on.strftime('%Y%m%d')}.{fmt}"


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export(dataset: Dataset, fmt: str) -> bytes:
    if fmt == FORMAT_CSV:
        return _export_csv(dataset)
    if fmt == FORMAT_XML:
        return _export_xml(dataset)
    if fmt == FORMAT_TXT:
        return _export_txt(dataset)
    raise ExportError(f"unknown export format {fmt!r}")


def _export_csv(dataset: Dataset) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(dataset.columns)
    for row in dataset.rows:
        writer.writerow([row[c] for c in dataset.columns])
    return buffer.getvalue().encode()


def _export_xml(dataset: Dataset) -> bytes:
    root = ET.Element("dataset", {"kind": dataset.kind})
    for row in dataset.rows:
        row_el = ET.SubElement(root, "row")
        for column in dataset.columns:
            ET.SubElement(row_el, column).text = row[column]
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def _escape_txt(value: str) -> str:
    value = value.replace("\\", "\\\\").replace("\n", "\\n")
    stripped = value.rstrip(" ")
    return stripped + "\\s" * (len(value) - len(stripped))


def _unescape_txt(value: str, line: int, base_col: int) -> str:
    out: list[str] = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(value):
            raise ParseError("dangling escape", line, base_col + i + 1)
        nxt = value[i + 1]
        if nxt == "\\":
            out.append("\\")
        elif nxt == "n":
            out.append("\n")
        elif nxt == "s":
            out.append(" ")
        else:
            raise ParseError(f"unknown escape \\{nxt}", line, base_col + i + 1)
        i += 2
    return "".join(out)


def _export_txt(dataset: Dataset) -> bytes:
    columns = dataset.columns
    escaped_rows = [[_escape_txt(row[c]) for c in columns] for row in dataset.rows]
    widths = [
        max(len(columns[i]), *(len(r[i]) for r in escaped_rows)) if escaped_rows
        else len(columns[i])
        for i in range(len(columns))
    ]

    def line_of(cells: list[str]) -> str:
        padded = [cell.ljust(widths[i]) for i, cell in enumerate(cells)]
        padded[-1] = cells[-1]  # no right padding on the last column
        return "  ".join(padded)

    lines = [line_of(list(columns)), "  ".join("-" * w for w in widths)]
    lines.extend(line_of(r) for r in escaped_rows)
    return ("\n".join(lines) + "\n").encode()


# ---------------------------------------------------------------------------
# Parse
# ---------------------------------------------------------------------------


def parse(data: bytes, fmt: str) -> Dataset:
    if fmt == FORMAT_CSV:
        return _parse_csv(data)
    if fmt == FORMAT_XML:
        return _parse_xml(data)
    if fmt == FORMAT_TXT:
        return _parse_txt(data)
    raise ExportError(f"unknown export format {fmt!r}")


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"input is not UTF-8: {exc.reason}") from None


def _kind_for_header(header: tuple[str, ...], line: int) -> str:
    kind = _KIND_BY_COLUMNS.get(header)
    if kind is None:
        raise ParseError(f"header {header} matches no dataset kind", line)
    return kind


def _parse_csv(data: bytes) -> Dataset:
    reader = csv.reader(io.StringIO(_decode(data), newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input", 1) from None
    kind = _kind_for_header(tuple(header), 1)
    columns = COLUMNS[kind]
    rows: list[dict[str, str]] = []
    for cells in reader:
        if len(cells) != len(columns):
            raise ParseError(
                f"expected {len(columns)} cells, got {len(cells)}", reader.line_num
            )
        rows.append(dict(zip(columns, cells)))
    return Dataset(kind=kind, rows=rows)


def _parse_xml(data: bytes) -> Dataset:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position
        raise ParseError(f"XML syntax: {exc.msg.split(':')[0]}", line, column) from None
    if root.tag != "dataset":
        raise ParseError(f"root element must be 'dataset', got {root.tag!r}", 1)
    if set(root.attrib) != {"kind"}:
        raise ParseError("root element must carry exactly the 'kind' attribute", 1)
    kind = root.attrib["kind"]
    if kind not in COLUMNS:
        raise ParseError(f"unknown dataset kind {kind!r}", 1)
    columns = COLUMNS[kind]
    if root.text and root.text.strip():
        raise ParseError("unexpected text under the root element", 1)
    rows: list[dict[str, str]] = []
    for i, row_el in enumerate(root):
        if row_el.tag != "row":
            raise ParseError(f"row {i}: expected <row>, got <{row_el.tag}>")
        if row_el.attrib:
            raise ParseError(f"row {i}: rows carry no attributes")
        if (row_el.text and row_el.text.strip()) or (row_el.tail and row_el.tail.strip()):
            raise ParseError(f"row {i}: unexpected text around <row>")
        tags = tuple(cell.tag for cell in row_el)
        if tags != columns:
            raise ParseError(f"row {i}: elements {tags} != {columns}")
        row: dict[str, str] = {}
        for cell in row_el:
            if list(cell) or cell.attrib:
                raise ParseError(f"row {i}: cell <{cell.tag}> must be plain text")
            if cell.tail and cell.tail.strip():
                raise ParseError(f"row {i}: unexpected text after <{cell.tag}>")
            row[cell.tag] = cell.text or ""
        rows.append(row)
    return Dataset(kind=kind, rows=rows)


def _parse_txt(data: bytes) -> Dataset:
    text = _decode(data)
    if not text.endswith("\n"):
        raise ParseError("missing trailing newline", max(1, text.count("\n") + 1))
    lines = text[:-1].split("\n")
    if len(lines) < 2:
        raise ParseError("need a header and a separator line", len(lines))
    separator = lines[1]
    widths: list[int] = []
    for run in separator.split("  "):
        if not run or run.strip("-"):
            raise ParseError("separator must be dash runs joined by two spaces", 2)
        widths.append(len(run))

    def split_fixed(line_text: str, line_no: int) -> list[tuple[str, int]]:
        cells = []
        offset = 0
        for i, width in enumerate(widths):
            end = offset + width if i < len(widths) - 1 else len(line_text)
            cells.append((line_text[offset:end].rstrip(" "), offset))
            offset = end + 2
        return cells

    header = tuple(cell for cell, _ in split_fixed(lines[0], 1))
    kind = _kind_for_header(header, 1)
    columns = COLUMNS[kind]
    if len(widths) != len(columns):
        raise ParseError(f"expected {len(columns)} columns, got {len(widths)}", 2)
    rows: list[dict[str, str]] = []
    for line_no, line_text in enumerate(lines[2:], start=3):
        row: dict[str, str] = {}
        for column, (cell, offset) in zip(columns, split_fixed(line_text, line_no)):
            row[column] = _unescape_txt(cell, line_no, offset)
        rows.append(row)
    return Dataset(kind=kind, rows=rows)


# ---------------------------------------------------------------------------
# Building datasets from state
# ---------------------------------------------------------------------------


def build_dataset(state, kind: str) -> Dataset:
    """Snapshot one registry out of the clinical state, sorted by primary id."""
    if kind == DATASET_MEDICATION:
        rows = [
            {"id": str(m.id), "name": m.name, "stock": str(m.stock)}
            for m in sorted(state.medications.values(), key=lambda m: m.id)
        ]
    elif kind == DATASET_DOCTORS:
        rows = [
            {"address": a.address, "name": a.name, "status": a.status}
            for a in sorted(state.accounts.values(), key=lambda a: a.address)
            if a.role == "doctor"
        ]
    elif kind == DATASET_PATIENTS:
        rows = [
            {
                "address": a.address,
                "name": a.name,
                "status": a.status,
                "registered_at": str(a.registered_at_ms),
            }
            for a in sorted(state.accounts.values(), key=lambda a: a.address)
            if a.role == "patient"
        ]
    elif kind == DATASET_LABORATORY:
        rows = []
        for definition in sorted(state.lab_definitions.values(), key=lambda d: d.id):
            for param in definition.parameters:
                rows.append(
                    {
                        "id": str(param.id),
                        "test_name": definition.test_name,
                        "parameter": param.name,
                        "unit": param.unit,
                        "reference_min": param.ref_min,
                        "reference_max": param.ref_max,
                    }
                )
    else:
        raise ExportError(f"unknown dataset kind {kind!r}")
    return Dataset(kind=kind, rows=rows)
