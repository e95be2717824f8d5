#pragma once
// Slide manifests: join of the manifest CSV (slide_id,image_uri,label),
// per-slide polygon annotation JSON, and the clinical table. Rows that
// fail to join are collected and reported together, never dropped.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "amilpath/clinical.hpp"
#include "amilpath/common.hpp"
#include "amilpath/csv.hpp"
#include "amilpath/geometry.hpp"
#include "amilpath/png_io.hpp"
#include "json.hpp"

namespace amilpath {

enum class AlnLabel { N0 = 0, NPlus1to2 = 1, NPlus3up = 2 };

inline std::string to_string(AlnLabel l) {
  switch (l) {
    case AlnLabel::N0: return "N0";
    case AlnLabel::NPlus1to2: return "N+(1-2)";
    case AlnLabel::NPlus3up: return "N+(>=3)";
  }
  return "?";
}

inline AlnLabel parse_label(const std::string& s) {
  if (s == "N0") return AlnLabel::N0;
  if (s == "N+(1-2)") return AlnLabel::NPlus1to2;
  if (s == "N+(>=3)") return AlnLabel::NPlus3up;
  fail("unknown ALN label '", s, "' (expected N0, N+(1-2) or N+(>=3))");
}

inline bool is_positive(AlnLabel l) { return l != AlnLabel::N0; }

struct SlideRecord {
  std::string slide_id;
  fs::path image_uri;
  int64_t width = 0, height = 0;  // level-0 size in pixels
  std::vector<Polygon> regions;
  ClinicalRecord clinical;
  AlnLabel label = AlnLabel::N0;
};

// Reads only the IHDR of a PNG; slide sizes are needed without decoding.
inline std::pair<int64_t, int64_t> read_png_size(const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  if (!f) fail("missing image file: ", path.string());
  unsigned char hdr[24];
  size_t n = std::fread(hdr, 1, sizeof(hdr), f);
  std::fclose(f);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  require(n == 24 && std::equal(sig, sig + 8, hdr), "not a PNG file: ", path.string());
  auto be32 = [&](int off) {
    return (static_cast<uint32_t>(hdr[off]) << 24) | (static_cast<uint32_t>(hdr[off + 1]) << 16) |
           (static_cast<uint32_t>(hdr[off + 2]) << 8) | static_cast<uint32_t>(hdr[off + 3]);
  };
  return {be32(16), be32(20)};
}

inline std::vector<Polygon> load_annotation(const fs::path& path,
                                            const std::string& slide_id) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  require(j.contains("slide_id") && j.at("slide_id").get<std::string>() == slide_id,
          "annotation ", path.string(), " does not belong to slide ", slide_id);
  std::vector<Polygon> out;
  for (const auto& poly : j.at("polygons")) {
    std::vector<PointD> verts;
    for (const auto& v : poly) {
      require(v.is_array() && v.size() == 2, "annotation vertex must be [x, y]");
      verts.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    out.emplace_back(std::move(verts));
  }
  return out;
}

inline void save_annotation(const fs::path& path, const std::string& slide_id,
                            const std::vector<Polygon>& polys) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : polys) {
    nlohmann::json pj = nlohmann::json::array();
    for (const auto& v : p.vertices()) pj.push_back({v.x, v.y});
    arr.push_back(pj);
  }
  nlohmann::json j = {{"slide_id", slide_id}, {"polygons", arr}};
  write_text_file(path, j.dump());
}

inline std::vector<SlideRecord> load_manifest(const fs::path& manifest_path,
                                              const fs::path& annotation_dir,
                                              const fs::path& clinical_path) {
  require(fs::exists(manifest_path), "missing manifest file: ", manifest_path.string());
  require(fs::exists(annotation_dir), "missing annotation dir: ", annotation_dir.string());
  require(fs::exists(clinical_path), "missing clinical file: ", clinical_path.string());

  CsvTable manifest = read_csv(manifest_path);
  int c_id = manifest.require_column("slide_id");
  int c_uri = manifest.require_column("image_uri");
  int c_label = manifest.require_column("label");

  CsvTable clinical = read_csv(clinical_path);
  int cc_id = clinical.require_column("slide_id");
  std::map<std::string, size_t> clinical_rows;
  for (size_t i = 0; i < clinical.rows.size(); ++i)
    clinical_rows[clinical.rows[i][static_cast<size_t>(cc_id)]] = i;

  std::set<std::string> seen;
  std::vector<std::string> missing_clinical, missing_annotation;
  std::vector<SlideRecord> out;
  fs::path base = manifest_path.parent_path();

  for (size_t i = 0; i < manifest.rows.size(); ++i) {
    const auto& row = manifest.rows[i];
    SlideRecord rec;
    rec.slide_id = row[static_cast<size_t>(c_id)];
    require(seen.insert(rec.slide_id).second, "duplicate slide_id '", rec.slide_id,
            "' in manifest");
    fs::path uri = row[static_cast<size_t>(c_uri)];
    rec.image_uri = uri.is_absolute() ? uri : base / uri;
    rec.label = parse_label(row[static_cast<size_t>(c_label)]);

    fs::path ann = annotation_dir / (rec.slide_id + ".json");
    if (!fs::exists(ann)) {
      missing_annotation.push_back(rec.slide_id);
      continue;
    }
    auto it = clinical_rows.find(rec.slide_id);
    if (it == clinical_rows.end()) {
      missing_clinical.push_back(rec.slide_id);
      continue;
    }

    auto [w, h] = read_png_size(rec.image_uri);
    rec.width = w;
    rec.height = h;
    rec.regions = load_annotation(ann, rec.slide_id);
    for (const auto& poly : rec.regions)
      for (const auto& v : poly.vertices())
        require(v.x >= 0 && v.y >= 0 && v.x <= static_cast<double>(w) &&
                    v.y <= static_cast<double>(h),
                "polygon vertex (", v.x, ",", v.y, ") outside level-0 bounds of slide ",
                rec.slide_id);
    rec.clinical = parse_clinical_row(clinical, it->second, "slide " + rec.slide_id);
    out.push_back(std::move(rec));
  }

  if (!missing_annotation.empty() || !missing_clinical.empty()) {
    std::string msg = "manifest join failed;";
    auto join_ids = [](const std::vector<std::string>& ids) {
      std::string s;
      for (const auto& id : ids) s += " " + id;
      return s;
    };
    if (!missing_annotation.empty())
      msg += " slides without annotation:" + join_ids(missing_annotation) + ";";
    if (!missing_clinical.empty())
      msg += " slides without clinical row:" + join_ids(missing_clinical);
    fail(msg);
  }
  return out;
}

}  // namespace amilpath
