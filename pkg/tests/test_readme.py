import pathlib
import re


def test_readme_library_example_runs():
    readme = (pathlib.Path(__file__).resolve().parents[1]
              / "README.md").read_text()
    blocks = re.findall(r"```python\n(.*?)```", readme, flags=re.S)
    assert blocks, "README lost its library example"
    namespace = {}
    exec(compile(blocks[0], "<readme>", "exec"), namespace)
    fit = namespace["fit"]
    assert fit.converged
    assert set(fit.support) == {0, 1, 2}
    assert namespace["witness"].passed
    assert namespace["report"].verdicts
    assert namespace["intervals"].intervals.shape[1] == 2
