from setuptools import setup, find_packages

try:
    with open('README.md', 'r', encoding='utf-8') as f:
        long_description = f.read()
except FileNotFoundError:
    long_description = 'Learn a tau-hop stabilizing controller for an unknown noisy LTI system from one trajectory'

setup(
    name='lts-stabilize',
    version='0.1.0',
    packages=find_packages(exclude=['tests', 'examples', 'examples.*']),
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
    ],
    entry_points={
        'console_scripts': [
            'lts-stabilize=lts_stabilize.cli:main',
        ],
    },
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "coverage>=7.0.0",
            "hypothesis>=6.0.0",
        ],
    },
    description='Learn a tau-hop stabilizing controller for an unknown noisy LTI system from one trajectory',
    long_description=long_description,
    long_description_content_type='text/markdown',
    classifiers=[
        'Programming Language :: Python :: 3',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
    ],
    python_requires='>=3.9',
)
