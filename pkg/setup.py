"""roadpatch setup.py"""

import re
from codecs import open
from os import path

from setuptools import find_packages, setup

PACKAGE_NAME = "roadpatch"
HERE = path.abspath(path.dirname(__file__))
with open(path.join(HERE, "README.md"), encoding="utf-8") as fp:
    README = fp.read()
with open(path.join(HERE, PACKAGE_NAME, "const.py"), encoding="utf-8") as fp:
    VERSION = re.search('__version__ = "([^"]+)"', fp.read()).group(1)

extras = {
    "lint": [
        "black",
        "flake8",
        "isort",
    ],
    "test": ["pytest ~= 7.0"],
}

setup(
    description="Painted road pattern attacks on an end-to-end driving model.",
    entry_points={"console_scripts": [f"{PACKAGE_NAME}={PACKAGE_NAME}:main"]},
    extras_require=extras,
    include_package_data=True,
    install_requires=[
        "Jinja2 ~= 3.0",
        "Pillow >= 9.0",
        "PyYAML ~= 6.0",
        "matplotlib ~= 3.5",
        "numpy >= 1.22",
        "scipy >= 1.8",
    ],
    license="GPL",
    long_description=README,
    long_description_content_type="text/markdown",
    name=PACKAGE_NAME,
    package_data={PACKAGE_NAME: ["templates/*.tpl"]},
    packages=find_packages(exclude=["tests"]),
    python_requires="~= 3.8",
    version=VERSION,
)
