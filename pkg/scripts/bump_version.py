import re


def update_version_in_main_py(file_path, new_version):
    with open(file_path) as file:
        content = file.read()

    version_pattern = r"version = Version\(\s*([0-9]+),\s*([0-9]+),\s*([0-9]+)\)"
    content = re.sub(
        version_pattern,
        f'version = Version({new_version.replace(".", ", ")})',
        content,
    )

    with open(file_path, "w") as file:
        file.write(content)


def update_version_in_pyproject_toml(file_path, new_version):
    with open(file_path) as file:
        content = file.read()

    new_content = re.sub(r'^version = "[0-9]+\.[0-9]+\.[0-9]+"', f'version = "{new_version}"', content, flags=re.M)

    with open(file_path, "w") as file:
        file.write(new_content)


def update_version_in_doc(file_path, new_version, old_version):
    with open(file_path) as file:
        content = file.read()

    content = content.replace(old_version, new_version)

    with open(file_path, "w") as file:
        file.write(content)


def update_program_version(new_version):
    if not re.fullmatch(r"[0-9]+\.[0-9]+\.[0-9]+", new_version):
        raise SystemExit(f"Not a MAJOR.MINOR.PATCH version: {new_version!r}")

    old_version_str = old_version()
    update_version_in_main_py(main_py_path, new_version)
    update_version_in_pyproject_toml(pyproject_toml_path, new_version)
    for path in doc_paths:
        update_version_in_doc(path, new_version, old_version_str)

    print(f"Updated version to {new_version} in all files.")


def old_version():
    with open(pyproject_toml_path) as file:
        pyproject_content = file.read()
        old_version = re.search(r'^version = "([0-9]+\.[0-9]+\.[0-9]+)"', pyproject_content, flags=re.M).group(1)

    return old_version


# Path
main_py_path = "./source/main.py"
doc_paths = ("./docs/mkdocs/index.md", "./docs/mkdocs.yml")
pyproject_toml_path = "./pyproject.toml"

print("Current version is: ", old_version())
new_version = input("Enter the new version: ")
update_program_version(new_version)
