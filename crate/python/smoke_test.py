"""Smoke test for the cskd Python extension.

Run after `maturin develop -m crates/py/Cargo.toml`, or after
`cargo build --release -p cskd-py --features extension-module`, in which case
the freshly built library under target/release is loaded directly.
"""

import importlib.util
import pathlib
import shutil
import sys
import tempfile


def load_cskd():
    try:
        import cskd

        return cskd
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for name in ("libcskd_py.so", "libcskd_py.dylib", "cskd_py.dll"):
        built = root / "target" / "release" / name
        if built.exists():
            suffix = ".pyd" if name.endswith(".dll") else ".so"
            target = pathlib.Path(tempfile.mkdtemp()) / ("cskd" + suffix)
            shutil.copy(built, target)
            spec = importlib.util.spec_from_file_location("cskd", target)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("cskd extension not found; build it first (see the module docstring)")


def main():
    cskd = load_cskd()

    obj = cskd.Image.phantom(32, 32)
    lam = cskd.poisson_gain_for_mean_count(obj, 1e4)
    keys = cskd.KeyBundle.generate(7, width=32, height=32, measurements=480,
                                   watermark_len=8, repeats=3, noise=f"poisson:{lam}")
    assert cskd.KeyBundle.from_text(keys.to_text()).to_text() == keys.to_text()

    session = cskd.Session(keys)
    bits = cskd.parse_watermark("c5:8")
    assert bits == [1, 1, 0, 0, 0, 1, 0, 1]

    carrier = session.carrier(obj, noise_seed=3)
    payload = session.embed(carrier, bits)
    assert len(payload) == 480
    assert all(0.5 <= v < 1.0 or -8.0 <= v <= -4.0 for v in payload.decoded())

    frame = payload.to_frame()
    assert frame[:4] == b"CKD1" and len(frame) == 9 + 8 * 480
    assert cskd.Payload.from_frame(frame) == payload

    server = cskd.Server(payload)
    try:
        fetched = cskd.fetch(server.address, timeout=10.0)
    finally:
        server.shutdown()
    assert fetched == payload

    ex = session.extract(fetched)
    assert ex.watermark == bits and ex.hex() == "c5:8"
    for got, want in zip(ex.measurements, carrier):
        assert abs(got - want) <= 1e-9 * max(abs(want), 1.0)

    rec = session.reconstruct(ex.measurements)
    assert rec.image.width == 32 and min(rec.image.values) >= 0.0

    mse, psnr, ber, extracted = session.pipeline(obj, bits, noise_seed=3, loopback=True)
    assert ber == 0.0 and extracted == bits and psnr > 10.0

    shuffled = payload.attacked("shuffle", seed=1)
    assert len(shuffled) == len(payload) and shuffled != payload
    assert cskd.complement_bits(0x3FE0000000000000) == 0xC01FFFFFFFFFFFFF
    assert cskd.ber([0, 1, 1, 0], [1, 1, 1, 0]) == 0.25

    try:
        cskd.Payload.from_frame(b"")
    except ValueError as e:
        assert "truncated magic" in str(e)
    else:
        raise AssertionError("empty frame accepted")

    print(f"smoke test passed: psnr={psnr:.2f} dB ber={ber} watermark={ex.hex()}")


if __name__ == "__main__":
    main()
