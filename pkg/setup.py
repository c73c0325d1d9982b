import os

from setuptools import find_packages, setup


def read(fname):
    """
    Helper to read README
    """
    return open(os.path.join(os.path.dirname(__file__), fname)).read().strip()


setup(
    name="couponcli",
    version="0.1.0",
    description="Coupon threshold solver and simulator for privacy-sensitive consumers",
    long_description=read("README.md"),
    long_description_content_type="text/markdown",
    url="",
    include_package_data=True,
    package_data={"couponcli": ["data/*.json", "data/examples/*.json"]},
    zip_safe=False,
    packages=find_packages(exclude=["tests"]),
    entry_points={"console_scripts": ["couponcli=couponcli.couponcli:run"]},
    python_requires=">=3.10",
    install_requires=["jsonschema>=4.21", "numpy>=1.24", "scipy>=1.10", "tqdm>=4.65.0"],
)
