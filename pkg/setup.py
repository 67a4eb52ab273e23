from setuptools import setup, find_packages

setup(
    name="occupation_paneldid",
    version="0.2.0",
    packages=find_packages(include=["src", "src.*"]),
    python_requires=">=3.10",
    install_requires=[
        'python-dotenv>=1.0.0',
        'pandas>=2.0',
        'pydantic>=2.5.2',
        'scipy>=1.11.4',
        'statsmodels>=0.14',
        'numpy>=1.24.0',
        'joblib>=1.3.2',
    ],
    extras_require={
        'test': ['pytest>=7.4', 'hypothesis>=6.90'],
    },
    entry_points={
        'console_scripts': ['paneldid=src.cli:main'],
    },
)
