#include "bca/ingest.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <unordered_map>

#include "bca/errors.hpp"

namespace bca {

using nlohmann::json;

SbrGrade parse_sbr_grade(std::string_view token) {
    if (token == "I") return SbrGrade::GradeI;
    if (token == "II") return SbrGrade::GradeII;
    if (token == "III") return SbrGrade::GradeIII;
    throw Error("invalid SBR grade token \"" + std::string(token) + "\" (expected I, II or III)");
}

std::string_view to_token(SbrGrade g) {
    switch (g) {
        case SbrGrade::GradeI: return "I";
        case SbrGrade::GradeII: return "II";
        case SbrGrade::GradeIII: return "III";
    }
    return "?";
}

std::string_view to_string(CategorizedGrade g) {
    return g == CategorizedGrade::High ? "High" : "LowIntermediate";
}

CategorizedGrade parse_categorized_grade(std::string_view s) {
    if (s == "High") return CategorizedGrade::High;
    if (s == "LowIntermediate") return CategorizedGrade::LowIntermediate;
    throw Error("invalid categorized grade \"" + std::string(s) + "\"");
}

Modality parse_modality(std::string_view key) {
    if (key == "cdis") return Modality::CDIS;
    if (key == "dwi") return Modality::DWI;
    if (key == "t2w") return Modality::T2W;
    if (key == "adc") return Modality::ADC;
    throw Error("unknown modality \"" + std::string(key) + "\" (expected cdis, dwi, t2w or adc)");
}

std::string_view to_key(Modality m) {
    switch (m) {
        case Modality::CDIS: return "cdis";
        case Modality::DWI: return "dwi";
        case Modality::T2W: return "t2w";
        case Modality::ADC: return "adc";
    }
    return "?";
}

std::string_view display_name(Modality m) {
    switch (m) {
        case Modality::CDIS: return "CDIs";
        case Modality::DWI: return "DWI";
        case Modality::T2W: return "T2w";
        case Modality::ADC: return "ADC";
    }
    return "?";
}

bool PatientRecord::has(Modality m) const noexcept {
    switch (m) {
        case Modality::CDIS: return cdis.has_value();
        case Modality::DWI: return !dwi.empty();
        case Modality::T2W: return t2w.has_value();
        case Modality::ADC: return adc.has_value();
    }
    return false;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

PatientRecord parse_record(const json& j, const std::filesystem::path& base, std::size_t line) {
    auto fail = [line](const std::string& msg) -> ParseError { return ParseError(msg, line); };
    if (!j.is_object()) throw fail("expected a JSON object");

    PatientRecord r;
    auto string_field = [&](const char* key) {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string()) throw fail(std::string("missing string field \"") + key + "\"");
        return it->get<std::string>();
    };
    r.patient_id = string_field("patient_id");
    r.institution = string_field("institution");
    if (r.patient_id.empty()) throw fail("empty patient_id");
    try {
        r.grade = parse_sbr_grade(string_field("grade"));
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw fail(e.what());
    }

    auto pit = j.find("paths");
    if (pit == j.end() || !pit->is_object()) throw fail("missing object field \"paths\"");
    for (const auto& [key, value] : pit->items()) {
        Modality m;
        try {
            m = parse_modality(key);
        } catch (const Error& e) {
            throw fail(e.what());
        }
        if (m == Modality::DWI) {
            if (!value.is_array()) throw fail("paths.dwi must be an array of paths");
            for (const auto& p : value) {
                if (!p.is_string()) throw fail("paths.dwi entries must be strings");
                r.dwi.push_back(resolve(base, p.get<std::string>()));
            }
            continue;
        }
        if (!value.is_string()) throw fail("paths." + key + " must be a string");
        auto path = resolve(base, value.get<std::string>());
        if (m == Modality::CDIS) r.cdis = path;
        if (m == Modality::T2W) r.t2w = path;
        if (m == Modality::ADC) r.adc = path;
    }
    if (!r.cdis && !r.t2w && !r.adc && r.dwi.empty()) throw fail("record has no modality paths");

    auto bit = j.find("b_values");
    const bool has_b = bit != j.end() && !bit->is_null();
    if (has_b) {
        if (!bit->is_array()) throw fail("b_values must be an array");
        for (const auto& b : *bit) {
            if (!b.is_number()) throw fail("b_values entries must be numbers");
            r.b_values.push_back(b.get<double>());
        }
    }
    if (r.dwi.empty() != r.b_values.empty())
        throw fail("b_values must be present exactly when DWI paths are present");
    if (!r.dwi.empty()) {
        if (r.b_values.size() < 2) throw fail("at least 2 b-values are required");
        if (r.b_values.size() != r.dwi.size()) throw fail("b_values and paths.dwi differ in length");
        if (r.b_values.front() < 0) throw fail("b-values must be non-negative");
        for (std::size_t i = 1; i < r.b_values.size(); ++i)
            if (!(r.b_values[i] > r.b_values[i - 1])) throw fail("b_values must be strictly increasing");
    }
    return r;
}

}  // namespace

std::vector<PatientRecord> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

    std::vector<PatientRecord> records;
    std::unordered_map<std::string, std::size_t> first_seen;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line);
        }
        PatientRecord r = parse_record(j, base, line);
        auto [it, inserted] = first_seen.emplace(r.patient_id, line);
        if (!inserted)
            throw ParseError("duplicate patient_id \"" + r.patient_id + "\" (first seen on line " +
                                 std::to_string(it->second) + ")",
                             line);
        records.push_back(std::move(r));
    }
    return records;
}

void write_manifest(std::span<const PatientRecord> records, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& r : records) {
        json paths = json::object();
        if (r.cdis) paths["cdis"] = r.cdis->string();
        if (r.t2w) paths["t2w"] = r.t2w->string();
        if (r.adc) paths["adc"] = r.adc->string();
        if (!r.dwi.empty()) {
            json list = json::array();
            for (const auto& p : r.dwi) list.push_back(p.string());
            paths["dwi"] = list;
        }
        json j{{"patient_id", r.patient_id},
               {"institution", r.institution},
               {"grade", std::string(to_token(r.grade))},
               {"paths", paths}};
        if (!r.b_values.empty()) j["b_values"] = r.b_values;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

CohortSummary cohort_summary(std::span<const PatientRecord> records) {
    CohortSummary s;
    for (auto g : {SbrGrade::GradeI, SbrGrade::GradeII, SbrGrade::GradeIII}) s.by_grade[g] = 0;
    s.by_category[CategorizedGrade::LowIntermediate] = 0;
    s.by_category[CategorizedGrade::High] = 0;
    for (const auto& r : records) {
        ++s.by_grade[r.grade];
        ++s.by_category[r.category()];
    }
    s.total = records.size();
    return s;
}

}  // namespace bca
