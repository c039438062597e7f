import numpy as np
import pytest

from conftest import make_volume, random_prob_volume
from oracles import oracle_mean

from lesionkit import (
    Geometry,
    MetaImageError,
    ValidationError,
    Volume,
    mean_volumes,
    physical_to_voxel,
    read_mha,
    validate_probability_map,
    voxel_to_physical,
    write_mha,
)
from lesionkit.volume import ELEMENT_DTYPES, decode_mha, encode_mha


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def test_geometry_validation():
    Geometry((1, 1, 1), (0.5, 0.5, 0.5), (-1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        Geometry((0, 1, 1), (1, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        Geometry((1, 1, 1), (0.0, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        Geometry((1, 1, 1), (-1.0, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        Geometry((1, 1, 1), (1, 1, 1), (float("nan"), 0, 0))
    with pytest.raises(ValueError):
        Geometry((1, 1, 1), (float("inf"), 1, 1), (0, 0, 0))


def test_geometry_compatible_tolerance():
    g = Geometry((4, 4, 4), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    assert g.compatible(Geometry((4, 4, 4), (1.0 + 5e-7, 1.0, 1.0), (0.0, 0.0, 5e-7)))
    assert not g.compatible(Geometry((4, 4, 4), (1.0 + 5e-6, 1.0, 1.0), (0.0, 0.0, 0.0)))
    assert not g.compatible(Geometry((4, 4, 5), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)))


def test_voxel_to_physical_identity():
    g = Geometry((8, 8, 8), (1, 1, 1), (0, 0, 0))
    assert voxel_to_physical(g, (0, 0, 0)) == (0.0, 0.0, 0.0)


def test_voxel_to_physical_affine_by_hand():
    g = Geometry((8, 8, 8), (2, 2, 2), (10, 0, 0))
    assert voxel_to_physical(g, (3, 0, 0)) == (16.0, 0.0, 0.0)
    assert physical_to_voxel(g, (16.0, 0.0, 0.0)) == (3.0, 0.0, 0.0)


def test_coordinate_round_trip_random():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        g = Geometry(
            rng.integers(1, 100, 3),
            rng.uniform(0.1, 5.0, 3),
            rng.uniform(-500, 500, 3),
        )
        idx = tuple(int(v) for v in rng.integers(-50, 150, 3))
        back = physical_to_voxel(g, voxel_to_physical(g, idx))
        for a in range(3):
            assert back[a] == pytest.approx(idx[a], rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# Volume construction
# ---------------------------------------------------------------------------

def test_volume_rejects_wrong_length_and_dtype():
    g = Geometry((2, 2, 2), (1, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError, match="buffer length"):
        Volume(g, np.zeros(7, dtype=np.float32))
    with pytest.raises(ValueError, match="dtype"):
        Volume(g, np.zeros(8, dtype=np.float64))


def test_volume_buffer_is_read_only():
    v = make_volume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        v.data[0] = 1.0


def test_as_array_is_x_fastest():
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4, order="F")
    v = make_volume(arr)
    assert v.data[0] == arr[0, 0, 0]
    assert v.data[1] == arr[1, 0, 0]  # x moves fastest in the flat buffer
    assert v.data[2] == arr[0, 1, 0]
    assert np.array_equal(v.as_array(), arr)


def test_probability_map_validation():
    validate_probability_map(make_volume(np.full((2, 2, 2), 0.5)))
    with pytest.raises(ValidationError):
        validate_probability_map(make_volume(np.full((2, 2, 2), 1.5)))
    with pytest.raises(ValidationError):
        validate_probability_map(make_volume(np.full((2, 2, 2), np.nan)))
    with pytest.raises(ValidationError):
        validate_probability_map(make_volume(np.zeros((2, 2, 2), dtype=np.int16), dtype=np.int16))


# ---------------------------------------------------------------------------
# MetaImage I/O
# ---------------------------------------------------------------------------

def _header(**overrides):
    fields = {
        "ObjectType": "Image",
        "NDims": "3",
        "BinaryData": "True",
        "BinaryDataByteOrderMSB": "False",
        "CompressedData": "False",
        "TransformMatrix": "1 0 0 0 1 0 0 0 1",
        "Offset": "0 0 0",
        "ElementSpacing": "1 1 1",
        "DimSize": "2 2 1",
        "ElementType": "MET_FLOAT",
        "ElementDataFile": "LOCAL",
    }
    fields.update({k: v for k, v in overrides.items() if v is not None})
    for k, v in overrides.items():
        if v is None:
            del fields[k]
    return ("".join(f"{k} = {v}\n" for k, v in fields.items())).encode("ascii")


def test_read_minimal_file(tmp_path):
    blob = _header() + np.arange(4, dtype="<f4").tobytes()
    path = tmp_path / "min.mha"
    path.write_bytes(blob)
    v = read_mha(path)
    assert v.geometry.dims == (2, 2, 1)
    assert v.element_kind == "MET_FLOAT"
    assert np.array_equal(v.data, np.arange(4, dtype=np.float32))


def test_write_uchar_single_voxel(tmp_path):
    v = make_volume(np.zeros((1, 1, 1), dtype=np.uint8), dtype=np.uint8)
    path = tmp_path / "one.mha"
    write_mha(v, path)
    blob = path.read_bytes()
    header_end = blob.rindex(b"LOCAL\n") + len(b"LOCAL\n")
    assert len(blob) - header_end == 1  # 1-byte payload


def test_write_is_canonical_and_stable():
    v = make_volume(np.full((3, 2, 2), 0.25))
    assert encode_mha(v) == encode_mha(v)
    blob = encode_mha(v)
    header = blob[: blob.index(b"LOCAL\n") + len(b"LOCAL\n")].decode()
    keys = [line.split(" = ")[0] for line in header.strip().splitlines()]
    assert keys == [
        "ObjectType", "NDims", "BinaryData", "BinaryDataByteOrderMSB",
        "CompressedData", "TransformMatrix", "Offset", "ElementSpacing",
        "DimSize", "ElementType", "ElementDataFile",
    ]


def test_round_trip_all_kinds(tmp_path):
    rng = np.random.default_rng(11)
    for kind, dtype in ELEMENT_DTYPES.items():
        dims = tuple(int(d) for d in rng.integers(1, 7, 3))
        n = int(np.prod(dims))
        if kind == "MET_FLOAT":
            data = rng.random(n, dtype=np.float32)
        else:
            info = np.iinfo(dtype)
            data = rng.integers(info.min, info.max, n).astype(dtype)
        v = Volume(Geometry(dims, rng.uniform(0.5, 3, 3), rng.uniform(-10, 10, 3)), data)
        path = tmp_path / f"{kind}.mha"
        write_mha(v, path)
        v2 = read_mha(path)
        assert np.array_equal(v2.data, v.data)
        assert v2.data.dtype == v.data.dtype
        assert v2.geometry.compatible(v.geometry)
        # rewriting the re-read volume reproduces the file bit for bit
        assert encode_mha(v2) == path.read_bytes()


def test_transform_matrix_optional_on_read():
    blob = _header(TransformMatrix=None) + np.zeros(4, dtype="<f4").tobytes()
    v = decode_mha(blob)
    assert v.geometry.dims == (2, 2, 1)


@pytest.mark.parametrize(
    "overrides,fragment",
    [
        ({"CompressedData": "True"}, "compressed data"),
        ({"TransformMatrix": "0 1 0 1 0 0 0 0 1"}, "non-identity"),
        ({"ElementDataFile": "volume.raw"}, "ElementDataFile"),
        ({"NDims": "2"}, "NDims"),
        ({"ElementType": "MET_DOUBLE"}, "ElementType"),
        ({"BinaryData": "False"}, "non-binary"),
        ({"BinaryDataByteOrderMSB": "True"}, "big-endian"),
        ({"ObjectType": "Mesh"}, "ObjectType"),
        ({"DimSize": "2 2"}, "DimSize"),
        ({"DimSize": "2 0 1"}, "geometry"),
        ({"ElementSpacing": "1 -1 1"}, "geometry"),
        ({"ElementSpacing": "a b c"}, "ElementSpacing"),
    ],
)
def test_rejects_unsupported_headers(overrides, fragment):
    blob = _header(**overrides) + np.zeros(4, dtype="<f4").tobytes()
    with pytest.raises(MetaImageError, match=fragment):
        decode_mha(blob)


def test_rejects_missing_required_key():
    blob = _header(Offset=None) + np.zeros(4, dtype="<f4").tobytes()
    with pytest.raises(MetaImageError, match="missing required key"):
        decode_mha(blob)


def test_rejects_malformed_line():
    blob = b"ObjectType = Image\nNonsense line\n" + _header()[19:]
    with pytest.raises(MetaImageError, match="malformed header line"):
        decode_mha(blob)


def test_rejects_unknown_key():
    blob = b"AnatomicalOrientation = RAI\n" + _header()
    with pytest.raises(MetaImageError, match="unsupported header key"):
        decode_mha(blob)


def test_rejects_duplicate_key():
    blob = b"ObjectType = Image\n" + _header()
    with pytest.raises(MetaImageError, match="duplicate header key"):
        decode_mha(blob)


def test_rejects_payload_mismatch():
    with pytest.raises(MetaImageError, match="payload length mismatch"):
        decode_mha(_header() + np.zeros(3, dtype="<f4").tobytes())
    with pytest.raises(MetaImageError, match="payload length mismatch"):
        decode_mha(_header() + np.zeros(5, dtype="<f4").tobytes())


def test_rejects_truncated_header():
    with pytest.raises(MetaImageError, match="ElementDataFile"):
        decode_mha(b"ObjectType = Image\nNDims = 3\n")


# ---------------------------------------------------------------------------
# mean_volumes
# ---------------------------------------------------------------------------

def test_mean_single_input_identity():
    v = random_prob_volume(np.random.default_rng(0), (4, 3, 2))
    out = mean_volumes([v])
    assert np.array_equal(out.data, v.data)


def test_mean_arithmetic():
    a = make_volume(np.full((2, 2, 2), 0.2))
    b = make_volume(np.full((2, 2, 2), 0.6))
    out = mean_volumes([a, b])
    assert np.allclose(out.data, 0.4, atol=1e-7)


def test_mean_matches_scalar_loop_oracle():
    rng = np.random.default_rng(3)
    vols = [random_prob_volume(rng, (5, 4, 3)) for _ in range(5)]
    out = mean_volumes(vols)
    expected = oracle_mean([v.data.tolist() for v in vols])
    assert np.abs(out.data - np.array(expected, dtype=np.float64)).max() <= 1e-7


def test_mean_bounds_and_identical_inputs():
    rng = np.random.default_rng(4)
    vols = [random_prob_volume(rng, (6, 5, 4)) for _ in range(7)]
    out = mean_volumes(vols)
    stack = np.stack([v.data for v in vols])
    assert (out.data >= stack.min(axis=0) - 1e-7).all()
    assert (out.data <= stack.max(axis=0) + 1e-7).all()
    same = mean_volumes([vols[0]] * 4)
    assert np.array_equal(same.data, vols[0].data)


def test_mean_errors():
    with pytest.raises(ValueError, match="at least one"):
        mean_volumes([])
    a = make_volume(np.zeros((2, 2, 2)))
    b = make_volume(np.zeros((2, 2, 2)), origin=(5, 0, 0))
    with pytest.raises(ValueError, match="incompatible"):
        mean_volumes([a, b])
