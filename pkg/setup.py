from setuptools import setup, find_packages

setup(
    name="sparse-miso-precoding",
    version="0.1.0",
    author="Douglas Mason",
    author_email="douglas.mason@mlb.com",
    description="l1-norm and thresholded precoders for massive MISO: asymptotic predictions and Monte Carlo checks",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.10",
    install_requires=[
        line.strip()
        for line in open("requirements.txt").readlines()
        if line.strip() and not line.strip().startswith("#")
    ],
    entry_points={
        "console_scripts": [
            "sparse-miso=sparse_miso.cli:main",
        ],
    },
)
