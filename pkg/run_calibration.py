"""Simple launcher for the pdecalib command line."""

from pdecalib.__main__ import main


if __name__ == "__main__":
    raise SystemExit(main())
