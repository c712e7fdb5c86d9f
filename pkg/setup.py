from setuptools import Extension, setup

setup(
    ext_modules=[
        Extension(
            "flowsplit._csplit",
            sources=["src/flowsplit/_csplit.c"],
            extra_compile_args=["-O2"],
            optional=True,
        )
    ]
)
