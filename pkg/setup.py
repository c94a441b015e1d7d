from setuptools import setup, find_packages

setup(
    name="abdoshape",
    version="0.1.0",
    description="Spectral and point-cloud organ shape descriptors for binary cohort classification",
    packages=find_packages(include=["src", "src.*"]),
    install_requires=[
        "numpy>=1.26",
        "scipy>=1.11",
        "scikit-image>=0.22",
        "trimesh>=4.0",
        "matplotlib>=3.8",
        "pydantic>=2.5.2",
        "python-dotenv>=1.0.0",
        "psutil>=5.9.8",
        "python-json-logger>=3.1",
    ],
    extras_require={
        "test": [
            "pytest>=8.0.0",
            "pytest-asyncio>=0.23.5",
            "pytest-cov>=4.1.0",
            "pytest-mock>=3.12.0",
            "pytest-timeout>=2.2.0",
            "pytest-xdist>=3.5.0",
            "scikit-learn>=1.3",
        ],
    },
    entry_points={"console_scripts": ["abdoshape=src.main:main"]},
    python_requires=">=3.9",
)
