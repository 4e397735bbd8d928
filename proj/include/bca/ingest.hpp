#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bca {

enum class SbrGrade { GradeI, GradeII, GradeIII };

/// Binary grading target: grades I and II merged, grade III on its own.
enum class CategorizedGrade { LowIntermediate, High };

enum class Modality { CDIS, DWI, T2W, ADC };

/// Manifest tokens "I", "II", "III" (case-sensitive).
SbrGrade parse_sbr_grade(std::string_view token);
std::string_view to_token(SbrGrade g);
std::string_view to_string(CategorizedGrade g);
CategorizedGrade parse_categorized_grade(std::string_view s);

/// Lower-case manifest / CLI keys: "cdis", "dwi", "t2w", "adc".
Modality parse_modality(std::string_view key);
std::string_view to_key(Modality m);
/// Display names used in reports: "CDIs", "DWI", "T2w", "ADC".
std::string_view display_name(Modality m);

constexpr CategorizedGrade categorize_grade(SbrGrade g) noexcept {
    return g == SbrGrade::GradeIII ? CategorizedGrade::High : CategorizedGrade::LowIntermediate;
}

struct PatientRecord {
    std::string patient_id;
    std::string institution;
    SbrGrade grade = SbrGrade::GradeI;
    std::optional<std::filesystem::path> cdis;
    std::optional<std::filesystem::path> t2w;
    std::optional<std::filesystem::path> adc;
    /// One path per b-value, in the order of b_values.
    std::vector<std::filesystem::path> dwi;
    std::vector<double> b_values;

    bool has(Modality m) const noexcept;
    CategorizedGrade category() const noexcept { return categorize_grade(grade); }
};

/// Parses a JSON-lines manifest. Relative paths resolve against the manifest's
/// directory. Blank lines are ignored; every other line must be one patient
/// object. Violations raise ParseError carrying the 1-based line number.
std::vector<PatientRecord> load_manifest(const std::filesystem::path& path);

/// Writes records one per line; paths are written as given.
void write_manifest(std::span<const PatientRecord> records, const std::filesystem::path& path);

struct CohortSummary {
    std::map<SbrGrade, std::size_t> by_grade;
    std::map<CategorizedGrade, std::size_t> by_category;
    std::size_t total = 0;
};

CohortSummary cohort_summary(std::span<const PatientRecord> records);

}  // namespace bca
