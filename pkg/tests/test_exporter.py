"""Dataset export/parse round trips across CSV, XML, and fixed-width TXT."""

from datetime import date

import pytest
from hypothesis import given, strategies as st

from medledger.exporter import (
    COLUMNS,
    DATASET_KINDS,
    DATASET_LABORATORY,
    DATASET_MEDICATION,
    Dataset,
    EXPORT_FORMATS,
    ExportError,
    MIME_TYPES,
    ParseError,
    build_dataset,
    export,
    export_filename,
    parse,
)

LAB_COLUMNS = ("id", "test_name", "parameter", "unit", "reference_min", "reference_max")
LAB_ROWS = [
    dict(zip(LAB_COLUMNS, values))
    for values in (
        ("1", "Test", "Parameter1", "Unit1", "1", "10"),
        ("2", "Test", "Parameter2", "Unit2", "2", "20"),
        ("3", "Test", "Parameter3", "Unit3", "3", "30"),
    )
]

GOLDEN_LAB_TXT = (
    b"id  test_name  parameter   unit   reference_min  reference_max\n"
    b"--  ---------  ----------  -----  -------------  -------------\n"
    b"1   Test       Parameter1  Unit1  1              10\n"
    b"2   Test       Parameter2  Unit2  2              20\n"
    b"3   Test       Parameter3  Unit3  3              30\n"
)


def lab_dataset():
    return Dataset(kind=DATASET_LABORATORY, rows=[dict(r) for r in LAB_ROWS])


class TestDataset:
    def test_unknown_kind(self):
        with pytest.raises(ExportError):
            Dataset(kind="appointments")

    def test_wrong_columns(self):
        with pytest.raises(ExportError):
            Dataset(kind=DATASET_MEDICATION, rows=[{"id": "1", "name": "x"}])

    def test_non_string_cell(self):
        with pytest.raises(ExportError):
            Dataset(kind=DATASET_MEDICATION,
                    rows=[{"id": "1", "name": "x", "stock": 3}])

    @pytest.mark.parametrize("bad", ["a\rb", "a\x00b", "a b", "\x7f"])
    def test_control_characters_refused(self, bad):
        with pytest.raises(ExportError):
            Dataset(kind=DATASET_MEDICATION,
                    rows=[{"id": "1", "name": bad, "stock": "0"}])

    def test_newline_and_tab_are_legal(self):
        Dataset(kind=DATASET_MEDICATION,
                rows=[{"id": "1", "name": "a\nb\tc", "stock": "0"}])

    def test_column_sets_pairwise_distinct(self):
        sets = list(COLUMNS.values())
        assert len(set(sets)) == len(sets)


class TestCsv:
    def test_lab_rows_exact_lines(self):
        lines = export(lab_dataset(), "csv").decode().splitlines()
        assert lines == [
            "id,test_name,parameter,unit,reference_min,reference_max",
            "1,Test,Parameter1,Unit1,1,10",
            "2,Test,Parameter2,Unit2,2,20",
            "3,Test,Parameter3,Unit3,3,30",
        ]

    def test_export_is_byte_stable(self):
        assert export(lab_dataset(), "csv") == export(lab_dataset(), "csv")

    def test_empty_laboratory_is_header_only(self):
        data = export(Dataset(kind=DATASET_LABORATORY), "csv")
        assert data.decode().splitlines() == [",".join(LAB_COLUMNS)]

    def test_comma_cell_is_quoted(self):
        d = Dataset(kind=DATASET_MEDICATION,
                    rows=[{"id": "1", "name": "a,b", "stock": "2"}])
        data = export(d, "csv")
        assert b'"a,b"' in data
        assert parse(data, "csv") == d

    def test_kind_recovered_from_header(self):
        assert parse(export(lab_dataset(), "csv"), "csv").kind == DATASET_LABORATORY

    def test_ragged_row_names_the_line(self):
        data = b"id,name,stock\r\n1,aspirin\r\n"
        with pytest.raises(ParseError) as info:
            parse(data, "csv")
        assert info.value.line == 2

    def test_alien_header_rejected(self):
        with pytest.raises(ParseError):
            parse(b"foo,bar\r\n", "csv")

    def test_empty_input_rejected(self):
        with pytest.raises(ParseError):
            parse(b"", "csv")


class TestXml:
    def test_shape(self):
        data = export(lab_dataset(), "xml")
        assert data.startswith(b"<?xml")
        assert b'<dataset kind="laboratory">' in data
        assert b"<parameter>Parameter1</parameter>" in data

    def test_round_trip(self):
        assert parse(export(lab_dataset(), "xml"), "xml") == lab_dataset()

    def test_unknown_extra_element_rejected(self):
        data = export(lab_dataset(), "xml").replace(
            b"</reference_max></row>", b"</reference_max><extra>x</extra></row>", 1)
        with pytest.raises(ParseError):
            parse(data, "xml")

    def test_wrong_root_rejected(self):
        with pytest.raises(ParseError):
            parse(b"<stuff/>", "xml")

    def test_unknown_kind_attribute_rejected(self):
        with pytest.raises(ParseError):
            parse(b'<dataset kind="furniture"></dataset>', "xml")

    def test_cell_attributes_rejected(self):
        data = export(lab_dataset(), "xml").replace(b"<unit>", b'<unit lang="en">', 1)
        with pytest.raises(ParseError):
            parse(data, "xml")

    def test_stray_text_rejected(self):
        data = export(lab_dataset(), "xml").replace(b"<row>", b"oops<row>", 1)
        with pytest.raises(ParseError):
            parse(data, "xml")

    def test_syntax_error_carries_position(self):
        with pytest.raises(ParseError) as info:
            parse(b'<dataset kind="medication"><row>', "xml")
        assert info.value.line is not None

    def test_empty_cell_round_trips(self):
        d = Dataset(kind=DATASET_MEDICATION,
                    rows=[{"id": "1", "name": "", "stock": "0"}])
        assert parse(export(d, "xml"), "xml") == d


class TestTxt:
    def test_golden_layout(self):
        assert export(lab_dataset(), "txt") == GOLDEN_LAB_TXT

    def test_round_trip(self):
        assert parse(GOLDEN_LAB_TXT, "txt") == lab_dataset()

    def test_separator_runs_mirror_widths(self):
        header, separator = export(lab_dataset(), "txt").decode().splitlines()[:2]
        assert len(separator) == len(header.rstrip())
        assert set(separator) <= {"-", " "}

    @pytest.mark.parametrize("tricky", [
        "trailing space ",
        "two  trailing  ",
        "embedded\nnewline",
        "back\\slash",
        "\\n literal",
        "   ",
    ])
    def test_awkward_cells_round_trip(self, tricky):
        d = Dataset(kind=DATASET_MEDICATION,
                    rows=[{"id": "1", "name": tricky, "stock": "9"}])
        assert parse(export(d, "txt"), "txt") == d

    def test_trailing_space_escaped_visibly(self):
        d = Dataset(kind=DATASET_MEDICATION,
                    rows=[{"id": "1", "name": "x ", "stock": "0"}])
        assert b"x\\s" in export(d, "txt")

    def test_missing_final_newline_rejected(self):
        with pytest.raises(ParseError):
            parse(GOLDEN_LAB_TXT[:-1], "txt")

    def test_mangled_separator_rejected(self):
        data = GOLDEN_LAB_TXT.replace(b"--  ", b"-x  ", 1)
        with pytest.raises(ParseError):
            parse(data, "txt")

    def test_dangling_escape_rejected(self):
        d = Dataset(kind=DATASET_MEDICATION,
                    rows=[{"id": "1", "name": "ab", "stock": "0"}])
        data = export(d, "txt").replace(b"ab", b"a\\", 1)
        with pytest.raises(ParseError) as info:
            parse(data, "txt")
        assert info.value.line == 3

    def test_unknown_escape_rejected(self):
        d = Dataset(kind=DATASET_MEDICATION,
                    rows=[{"id": "1", "name": "ab", "stock": "0"}])
        data = export(d, "txt").replace(b"ab", b"\\q", 1)
        with pytest.raises(ParseError):
            parse(data, "txt")

    def test_non_utf8_rejected(self):
        with pytest.raises(ParseError):
            parse(b"\xff\xfe", "txt")


class TestFormatPlumbing:
    def test_unknown_format(self):
        with pytest.raises(ExportError):
            export(lab_dataset(), "pdf")
        with pytest.raises(ExportError):
            parse(b"", "pdf")

    def test_mime_types(self):
        assert MIME_TYPES == {
            "csv": "text/csv",
            "xml": "application/xml",
            "txt": "text/plain",
        }

    def test_filename_pattern(self):
        assert export_filename("medication", "csv", date(2024, 3, 1)) \
            == "medication_20240301.csv"
        assert export_filename("laboratory", "txt", date(2026, 12, 31)) \
            == "laboratory_20261231.txt"


class TestBuildDataset:
    def test_laboratory_matches_definition(self, clinical_realm):
        d = build_dataset(clinical_realm.state, DATASET_LABORATORY)
        assert d.rows == LAB_ROWS

    def test_medication_snapshot(self, clinical_realm):
        d = build_dataset(clinical_realm.state, DATASET_MEDICATION)
        assert d.rows == [{"id": "1", "name": "Paracetamol 500mg", "stock": "50"}]

    def test_doctor_and_patient_registries(self, clinical_realm):
        doctors = build_dataset(clinical_realm.state, "doctors")
        patients = build_dataset(clinical_realm.state, "patients")
        assert {r["name"] for r in doctors.rows} == {"Dr. One", "Dr. Two"}
        assert {r["name"] for r in patients.rows} == {"Pat One", "Pat Two"}
        assert all(r["status"] == "active" for r in doctors.rows + patients.rows)
        assert all(r["registered_at"].isdigit() for r in patients.rows)

    def test_rows_sorted_by_primary_id(self, clinical_realm):
        doctors = build_dataset(clinical_realm.state, "doctors")
        addresses = [r["address"] for r in doctors.rows]
        assert addresses == sorted(addresses)

    def test_unknown_kind(self, clinical_realm):
        with pytest.raises(ExportError):
            build_dataset(clinical_realm.state, "everything")


cell_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")) | st.sampled_from("\n\t"),
    max_size=20,
)


@st.composite
def datasets(draw):
    kind = draw(st.sampled_from(DATASET_KINDS))
    columns = COLUMNS[kind]
    rows = draw(st.lists(
        st.fixed_dictionaries({c: cell_text for c in columns}), max_size=6))
    return Dataset(kind=kind, rows=[{c: row[c] for c in columns} for row in rows])


class TestRoundTripProperty:
    @given(datasets(), st.sampled_from(EXPORT_FORMATS))
    def test_parse_inverts_export(self, dataset, fmt):
        assert parse(export(dataset, fmt), fmt) == dataset
