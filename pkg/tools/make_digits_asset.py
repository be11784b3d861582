"""Regenerate the bundled 8x8 digit asset.

Source: the classic UCI optical-recognition digit set as shipped by
scikit-learn (1797 samples, 10 classes, 8x8 grayscale, intensities
0..16).  We rescale intensities to [0, 1] and write the package's own
dataset container.  Run from the repository root:

    python3 tools/make_digits_asset.py
"""

from pathlib import Path

from sklearn.datasets import load_digits

from frematch import data


def main() -> None:
    raw = load_digits()
    images = raw.images.astype("float64") / 16.0
    ds = data.Dataset(name="digits8x8", samples=images,
                      labels=raw.target.astype("int64"), num_classes=10)
    out = Path(__file__).resolve().parent.parent / "src" / "frematch" / "assets"
    out.mkdir(parents=True, exist_ok=True)
    data.save_dataset(out / "digits8x8.bin", ds)
    print(f"wrote {out / 'digits8x8.bin'} ({ds.samples.shape[0]} samples)")


if __name__ == "__main__":
    main()
