"""
Unit tests for security.py module.

This module tests security-related functions including:
- Path validation and sanitization
- File extension validation
- CSV injection prevention
- Backup creation and overwrite confirmation
"""

import os
import tempfile
from pathlib import Path

import pandas as pd
import pytest

from exceptions import SecurityError

# Import functions to test
from security import (
    ALLOWED_CSV_EXTENSIONS,
    ALLOWED_MODEL_EXTENSIONS,
    ALLOWED_OUTPUT_EXTENSIONS,
    confirm_overwrite,
    create_backup,
    prepare_output,
    sanitize_csv_value,
    sanitize_dataframe_for_csv,
    validate_and_resolve_path,
    validate_directory_path,
    validate_file_path,
    write_csv,
)


@pytest.mark.unit
class TestValidateAndResolvePath:
    """Tests for validate_and_resolve_path function."""

    def test_validate_absolute_path(self, temp_dir):
        """Test validation of absolute path."""
        result = validate_and_resolve_path(temp_dir)
        assert result.is_absolute()
        assert str(result) == str(Path(temp_dir).resolve())

    def test_validate_relative_path(self):
        """Test validation of relative path."""
        result = validate_and_resolve_path(".")
        assert result.is_absolute()

    @pytest.mark.security
    def test_path_traversal_rejected(self):
        """Parent-directory components are rejected before resolution."""
        with pytest.raises(SecurityError, match="Path traversal detected"):
            validate_and_resolve_path("../../../tmp")

    @pytest.mark.security
    def test_embedded_traversal_rejected(self):
        with pytest.raises(SecurityError, match="Path traversal detected"):
            validate_and_resolve_path("models/../../etc/passwd.yaml")

    def test_nonexistent_path_must_exist(self):
        """Test validation when path must exist but doesn't."""
        with pytest.raises(FileNotFoundError):
            validate_and_resolve_path("/nonexistent/path", must_exist=True)

    def test_nonexistent_path_optional(self):
        """Test validation when path doesn't need to exist."""
        result = validate_and_resolve_path("/tmp/newpath", must_exist=False)
        assert result.is_absolute()

    def test_empty_path_rejected(self):
        with pytest.raises(SecurityError, match="non-empty string"):
            validate_and_resolve_path("")

    def test_invalid_path_format_null_bytes(self):
        """Test that paths with null bytes raise SecurityError."""
        with pytest.raises(SecurityError, match="Invalid path format"):
            validate_and_resolve_path("test\x00path")

    def test_invalid_path_format_oserror(self, mocker):
        """Test handling of OSError from Path.resolve()."""
        mocker.patch("pathlib.Path.resolve", side_effect=OSError("Invalid path"))
        with pytest.raises(SecurityError, match="Invalid path format"):
            validate_and_resolve_path("/some/path")

    @pytest.mark.security
    def test_path_traversal_detection_with_mock(self, mocker):
        """Test path traversal detection when '..' appears in resolved path components."""
        # Simulates a symlink that resolves through a parent directory
        mock_path = mocker.Mock(spec=Path)
        type(mock_path).__str__ = mocker.Mock(return_value="/tmp/../etc/passwd")
        mock_path.is_absolute.return_value = True

        mocker.patch("pathlib.Path.resolve", return_value=mock_path)

        with pytest.raises(SecurityError, match="Path traversal detected"):
            validate_and_resolve_path("/some/path")


@pytest.mark.unit
class TestValidateFilePath:
    """Tests for validate_file_path function."""

    def test_validate_csv_file(self, temp_csv_file):
        """Test validation of CSV file."""
        result = validate_file_path(temp_csv_file, allowed_extensions=ALLOWED_CSV_EXTENSIONS)
        assert result.is_absolute()
        assert result.suffix == ".csv"

    @pytest.mark.security
    def test_invalid_extension(self, temp_csv_file):
        """Test rejection of invalid file extension."""
        with pytest.raises(SecurityError, match="Invalid file extension"):
            validate_file_path(temp_csv_file, allowed_extensions=ALLOWED_MODEL_EXTENSIONS)

    def test_file_is_directory(self, temp_dir):
        """Test rejection when path is a directory."""
        with pytest.raises(SecurityError, match="Path is not a file"):
            validate_file_path(temp_dir, allowed_extensions=None, must_exist=True)

    @pytest.mark.parametrize("suffix", [".yaml", ".yml", ".YAML"])
    def test_model_extensions(self, suffix):
        """Model files may use either YAML suffix in any case."""
        with tempfile.NamedTemporaryFile(mode="w", suffix=suffix, delete=False) as f:
            temp_path = f.name

        try:
            result = validate_file_path(temp_path, allowed_extensions=ALLOWED_MODEL_EXTENSIONS, must_exist=True)
            assert result.suffix.lower() in ALLOWED_MODEL_EXTENSIONS
        finally:
            if os.path.exists(temp_path):
                os.remove(temp_path)

    def test_missing_model_file(self):
        with pytest.raises(FileNotFoundError):
            validate_file_path("/nonexistent/model.yaml", allowed_extensions=ALLOWED_MODEL_EXTENSIONS)


@pytest.mark.unit
class TestValidateDirectoryPath:
    """Tests for validate_directory_path function."""

    def test_validate_existing_directory(self, temp_dir):
        """Test validation of existing directory."""
        result = validate_directory_path(temp_dir, must_exist=True)
        assert result.is_absolute()
        assert result.is_dir()

    def test_create_directory_if_missing(self):
        """Test automatic directory creation."""
        with tempfile.TemporaryDirectory() as temp_base:
            new_dir = os.path.join(temp_base, "results", "run1")
            result = validate_directory_path(new_dir, create_if_missing=True)
            assert os.path.isdir(result)

    def test_directory_is_file(self, temp_csv_file):
        """Test rejection when path is a file."""
        with pytest.raises(SecurityError, match="Path is not a directory"):
            validate_directory_path(temp_csv_file, must_exist=True)

    def test_nonexistent_directory_no_create(self):
        """Test error when directory doesn't exist and creation not requested."""
        with pytest.raises(FileNotFoundError):
            validate_directory_path("/nonexistent/directory", must_exist=True)

    def test_creation_failure_raises_security_error(self, temp_dir, mocker):
        mocker.patch("pathlib.Path.mkdir", side_effect=OSError("read-only"))
        with pytest.raises(SecurityError, match="Failed to create directory"):
            validate_directory_path(os.path.join(temp_dir, "blocked"), create_if_missing=True)


@pytest.mark.unit
@pytest.mark.security
class TestSanitizeCsvValue:
    """Tests for sanitize_csv_value function."""

    @pytest.mark.parametrize(
        "raw, expected",
        [
            ("=SUM(A1:A10)", "'=SUM(A1:A10)"),
            ("+1+1", "'+1+1"),
            ("-1-1", "'-1-1"),
            ("@SUM(1,2)", "'@SUM(1,2)"),
            ("\tvalue", "'\tvalue"),
            ("\nvalue", "'\nvalue"),
        ],
    )
    def test_formula_prefixes_quoted(self, raw, expected):
        assert sanitize_csv_value(raw) == expected

    def test_inner_control_characters_unchanged(self):
        """Tabs and newlines after the first character are safe."""
        assert sanitize_csv_value("value\twith\ttabs") == "value\twith\ttabs"
        assert sanitize_csv_value("value\nwith\nnewlines") == "value\nwith\nnewlines"

    def test_safe_value_unchanged(self):
        """Test that safe values are not modified."""
        assert sanitize_csv_value("nn") == "nn"

    def test_numeric_value_unchanged(self):
        """Test that numeric values are converted to string."""
        assert sanitize_csv_value(123.45) == "123.45"

    def test_negative_number_not_quoted(self):
        """Negative states are data, not formulas."""
        assert sanitize_csv_value(-0.501) == "-0.501"
        assert sanitize_csv_value(-3) == "-3"

    def test_float_keeps_full_precision(self):
        assert float(sanitize_csv_value(0.1 + 0.2)) == 0.1 + 0.2

    def test_none_value(self):
        """Test handling of None value (converted to empty string)."""
        assert sanitize_csv_value(None) == ""

    def test_nan_value(self):
        assert sanitize_csv_value(float("nan")) == ""


@pytest.mark.unit
class TestSanitizeDataframeForCsv:
    """Tests for sanitize_dataframe_for_csv function."""

    def test_sanitize_dataframe_with_formulas(self):
        """Test sanitization of DataFrame with formula injection attempts."""
        df = pd.DataFrame({"A": ["=1+1", "normal", "+2+2"], "B": [1, 2, 3], "C": ["@SUM(1,2)", "safe", "-3-3"]})

        result = sanitize_dataframe_for_csv(df)

        assert result.loc[0, "A"] == "'=1+1"
        assert result.loc[1, "A"] == "normal"
        assert result.loc[2, "A"] == "'+2+2"
        assert result.loc[0, "C"] == "'@SUM(1,2)"
        assert result.loc[2, "C"] == "'-3-3"

    def test_sanitize_preserves_numeric_columns(self):
        """Numbers become their exact text form."""
        df = pd.DataFrame({"k": [1, 2, 3], "x1": [1.1, -2.2, 3.3]})

        result = sanitize_dataframe_for_csv(df)

        assert result["k"].tolist() == ["1", "2", "3"]
        assert result["x1"].tolist() == ["1.1", "-2.2", "3.3"]

    def test_input_not_modified(self):
        df = pd.DataFrame({"branch": ["=evil"]})
        sanitize_dataframe_for_csv(df)
        assert df.loc[0, "branch"] == "=evil"

    def test_sanitize_empty_dataframe(self):
        """Test sanitization of empty DataFrame."""
        result = sanitize_dataframe_for_csv(pd.DataFrame())
        assert result.empty


@pytest.mark.unit
class TestCreateBackup:
    """Tests for create_backup function."""

    def test_create_backup_success(self, temp_csv_file, mock_logger):
        """Test successful backup creation."""
        backup_path = create_backup(temp_csv_file, logger=mock_logger)

        assert backup_path is not None
        assert os.path.exists(backup_path)
        # Backup format is: filename.csv.backup_TIMESTAMP
        assert ".csv.backup_" in backup_path

    def test_create_backup_nonexistent_file(self, mock_logger):
        """Test backup creation for non-existent file."""
        assert create_backup("/nonexistent/file.csv", logger=mock_logger) is None

    def test_backup_preserves_content(self, temp_dir, mock_logger):
        """Test that backup preserves file content."""
        original_file = os.path.join(temp_dir, "certificate.yaml")
        with open(original_file, "w") as f:
            f.write("kind: certificate\n")

        backup_path = create_backup(original_file, logger=mock_logger)

        with open(backup_path, "r") as f:
            assert f.read() == "kind: certificate\n"

    def test_backup_failure_raises_ioerror(self, temp_csv_file, mock_logger, mocker):
        mocker.patch("shutil.copy2", side_effect=OSError("disk full"))
        with pytest.raises(IOError, match="Failed to create backup"):
            create_backup(temp_csv_file, logger=mock_logger)


@pytest.mark.unit
class TestConfirmOverwrite:
    """Tests for confirm_overwrite function."""

    @pytest.mark.parametrize("answer, expected", [("y", True), ("Y", True), ("yes", True), ("n", False), ("", False)])
    def test_answers(self, temp_csv_file, mock_logger, monkeypatch, answer, expected):
        monkeypatch.setattr("builtins.input", lambda _: answer)
        assert confirm_overwrite(temp_csv_file, logger=mock_logger) is expected

    def test_missing_file_needs_no_confirmation(self, mock_logger, monkeypatch):
        def fail(_):
            raise AssertionError("input() must not be called")

        monkeypatch.setattr("builtins.input", fail)
        assert confirm_overwrite("/nonexistent/trajectory.csv", logger=mock_logger) is True

    def test_eof_counts_as_decline(self, temp_csv_file, mock_logger, monkeypatch):
        def eof(_):
            raise EOFError

        monkeypatch.setattr("builtins.input", eof)
        assert confirm_overwrite(temp_csv_file, logger=mock_logger) is False


@pytest.mark.unit
class TestPrepareOutput:
    """Tests for prepare_output and write_csv."""

    def test_new_file_is_ready(self, temp_dir, mock_logger):
        assert prepare_output(Path(temp_dir) / "reach.yaml", logger=mock_logger) is True

    def test_existing_file_backed_up_when_skipping_confirmation(self, temp_csv_file, mock_logger):
        assert prepare_output(Path(temp_csv_file), skip_confirmation=True, logger=mock_logger) is True
        backups = [name for name in os.listdir(os.path.dirname(temp_csv_file)) if ".csv.backup_" in name]
        assert any(name.startswith(os.path.basename(temp_csv_file)) for name in backups)

    def test_declined_overwrite(self, temp_csv_file, mock_logger, monkeypatch):
        monkeypatch.setattr("builtins.input", lambda _: "n")
        assert prepare_output(Path(temp_csv_file), logger=mock_logger) is False

    def test_write_csv_sanitizes(self, temp_dir, mock_logger):
        path = Path(temp_dir) / "trajectory.csv"
        frame = pd.DataFrame({"k": [0, 1], "x1": [1.0, -0.5], "branch": ["nn", "=cmd"]})

        write_csv(frame, path, mock_logger)
        loaded = pd.read_csv(path)

        assert loaded["x1"].tolist() == [1.0, -0.5]
        assert loaded["branch"].tolist() == ["nn", "'=cmd"]
        assert "Unnamed: 0" not in loaded.columns


@pytest.mark.unit
class TestConstants:
    """Test that security constants are defined correctly."""

    def test_allowed_csv_extensions(self):
        assert ALLOWED_CSV_EXTENSIONS == [".csv"]

    def test_allowed_model_extensions(self):
        assert ".yaml" in ALLOWED_MODEL_EXTENSIONS
        assert ".yml" in ALLOWED_MODEL_EXTENSIONS

    def test_output_extensions_cover_all_writers(self):
        for suffix in (".yaml", ".csv", ".lp"):
            assert suffix in ALLOWED_OUTPUT_EXTENSIONS
