/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace thalseg {

namespace {

struct Counts {
  int64_t a = 0, b = 0, both = 0;
};

Counts count_class(const LabelMap& a, const LabelMap& b, int class_id) {
  require_same_geometry(a.geo(), b.geo());
  Counts c;
  const auto& la = a.labels();
  const auto& lb = b.labels();
  for (size_t i = 0; i < la.size(); ++i) {
    const bool ina = la[i] == class_id;
    const bool inb = lb[i] == class_id;
    c.a += ina;
    c.b += inb;
    c.both += (ina && inb);
  }
  return c;
}

double dice_from_counts(const Counts& c) {
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double vsi_from_counts(const Counts& c) {
  if (c.a + c.b == 0) return 1.0;
  return 1.0 - static_cast<double>(std::llabs(c.a - c.b)) / static_cast<double>(c.a + c.b);
}

Counts count_union(const LabelMap& a, const LabelMap& b) {
  require_same_geometry(a.geo(), b.geo());
  Counts c;
  const auto& la = a.labels();
  const auto& lb = b.labels();
  for (size_t i = 0; i < la.size(); ++i) {
    const bool ina = la[i] > 0;
    const bool inb = lb[i] > 0;
    c.a += ina;
    c.b += inb;
    c.both += (ina && inb);
  }
  return c;
}

}  // namespace

double dice(const LabelMap& a, const LabelMap& b, int class_id) {
  require(a.taxonomy().valid(class_id), ErrorKind::InvalidArgument,
          cat("class id ", class_id, " not in taxonomy"));
  return dice_from_counts(count_class(a, b, class_id));
}

double vsi(const LabelMap& a, const LabelMap& b, int class_id) {
  require(a.taxonomy().valid(class_id), ErrorKind::InvalidArgument,
          cat("class id ", class_id, " not in taxonomy"));
  return vsi_from_counts(count_class(a, b, class_id));
}

MetricsReport report(const LabelMap& pred, const LabelMap& ref, const std::string& subject_id,
                     const std::string& cohort) {
  require_same_geometry(pred.geo(), ref.geo());
  const Taxonomy& tax = ref.taxonomy();
  const double vox_mm3 = ref.geo().voxel_volume_mm3();

  MetricsReport rep;
  rep.subject_id = subject_id;
  rep.cohort = cohort;

  const int mtt_id = tax.id("MTT");
  double sum_d = 0.0, sum_v = 0.0;
  double sum_d_nuc = 0.0, sum_v_nuc = 0.0;
  int n_nuc = 0;
  for (int c = 1; c < tax.num_classes(); ++c) {
    const Counts cnt = count_class(pred, ref, c);
    ClassMetrics m;
    m.class_id = c;
    m.name = tax.name(c);
    m.dice = dice_from_counts(cnt);
    m.vsi = vsi_from_counts(cnt);
    m.volume_pred_mm3 = static_cast<double>(cnt.a) * vox_mm3;
    m.volume_ref_mm3 = static_cast<double>(cnt.b) * vox_mm3;
    m.absent_in_both = (cnt.a + cnt.b == 0);
    m.absent_in_ref = (cnt.b == 0);
    sum_d += m.dice;
    sum_v += m.vsi;
    if (c != mtt_id) {
      sum_d_nuc += m.dice;
      sum_v_nuc += m.vsi;
      ++n_nuc;
    }
    rep.per_class.push_back(std::move(m));
  }
  const int n = static_cast<int>(rep.per_class.size());
  rep.mean_dice_structures = n ? sum_d / n : 0.0;
  rep.mean_vsi_structures = n ? sum_v / n : 0.0;
  rep.mean_dice_nuclei = n_nuc ? sum_d_nuc / n_nuc : rep.mean_dice_structures;
  rep.mean_vsi_nuclei = n_nuc ? sum_v_nuc / n_nuc : rep.mean_vsi_structures;

  const Counts u = count_union(pred, ref);
  rep.whole.class_id = -1;
  rep.whole.name = "thalamus";
  rep.whole.dice = dice_from_counts(u);
  rep.whole.vsi = vsi_from_counts(u);
  rep.whole.volume_pred_mm3 = static_cast<double>(u.a) * vox_mm3;
  rep.whole.volume_ref_mm3 = static_cast<double>(u.b) * vox_mm3;
  rep.whole.absent_in_both = (u.a + u.b == 0);
  rep.whole.absent_in_ref = (u.b == 0);
  return rep;
}

namespace {

nlohmann::json class_to_json(const ClassMetrics& m) {
  return nlohmann::json{{"class_id", m.class_id},
                        {"name", m.name},
                        {"dice", m.dice},
                        {"vsi", m.vsi},
                        {"volume_pred_mm3", m.volume_pred_mm3},
                        {"volume_ref_mm3", m.volume_ref_mm3},
                        {"absent_in_both", m.absent_in_both},
                        {"absent_in_ref", m.absent_in_ref}};
}

ClassMetrics class_from_json(const nlohmann::json& j) {
  ClassMetrics m;
  m.class_id = j.at("class_id").get<int>();
  m.name = j.at("name").get<std::string>();
  m.dice = j.at("dice").get<double>();
  m.vsi = j.at("vsi").get<double>();
  m.volume_pred_mm3 = j.at("volume_pred_mm3").get<double>();
  m.volume_ref_mm3 = j.at("volume_ref_mm3").get<double>();
  m.absent_in_both = j.at("absent_in_both").get<bool>();
  m.absent_in_ref = j.at("absent_in_ref").get<bool>();
  return m;
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["subject_id"] = subject_id;
  j["cohort"] = cohort;
  j["whole"] = class_to_json(whole);
  j["mean_dice_structures"] = mean_dice_structures;
  j["mean_vsi_structures"] = mean_vsi_structures;
  j["mean_dice_nuclei"] = mean_dice_nuclei;
  j["mean_vsi_nuclei"] = mean_vsi_nuclei;
  j["per_class"] = nlohmann::json::array();
  for (const auto& m : per_class) j["per_class"].push_back(class_to_json(m));
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MetricsReport rep;
  rep.subject_id = j.at("subject_id").get<std::string>();
  rep.cohort = j.value("cohort", "");
  rep.whole = class_from_json(j.at("whole"));
  rep.mean_dice_structures = j.at("mean_dice_structures").get<double>();
  rep.mean_vsi_structures = j.at("mean_vsi_structures").get<double>();
  rep.mean_dice_nuclei = j.at("mean_dice_nuclei").get<double>();
  rep.mean_vsi_nuclei = j.at("mean_vsi_nuclei").get<double>();
  for (const auto& e : j.at("per_class")) rep.per_class.push_back(class_from_json(e));
  return rep;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string render_metrics_table(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) return "(no reports)\n";

  std::vector<std::string> groups;
  for (const auto& r : reports) {
    const std::string g = r.cohort.empty() ? "all" : r.cohort;
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }

  struct Row {
    std::string label;
    std::map<std::string, std::pair<double, double>> mean_dice_vsi;  // group -> (dice, vsi)
  };
  std::vector<std::string> structure_names;
  structure_names.push_back("thalamus");
  for (const auto& m : reports.front().per_class) structure_names.push_back(m.name);

  std::vector<Row> rows;
  for (const auto& name : structure_names) {
    Row row;
    std::vector<double> ref_vols;
    std::map<std::string, std::vector<double>> d, v;
    for (const auto& r : reports) {
      const std::string g = r.cohort.empty() ? "all" : r.cohort;
      const ClassMetrics* m = nullptr;
      if (name == "thalamus") {
        m = &r.whole;
      } else {
        for (const auto& cm : r.per_class)
          if (cm.name == name) m = &cm;
      }
      if (!m) continue;
      ref_vols.push_back(m->volume_ref_mm3);
      d[g].push_back(m->dice);
      v[g].push_back(m->vsi);
    }
    std::ostringstream lbl;
    lbl << (name == "thalamus" ? "Thalamus" : name) << " (" << std::llround(median(ref_vols))
        << ")";
    row.label = lbl.str();
    for (const auto& g : groups) {
      double md = 0, mv = 0;
      if (!d[g].empty()) {
        for (double x : d[g]) md += x;
        for (double x : v[g]) mv += x;
        md /= static_cast<double>(d[g].size());
        mv /= static_cast<double>(v[g].size());
      }
      row.mean_dice_vsi[g] = {md, mv};
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream os;
  os << std::left << std::setw(20) << "Structure (mm3)";
  for (const auto& g : groups) os << std::right << std::setw(12) << ("Dice:" + g);
  for (const auto& g : groups) os << std::right << std::setw(12) << ("VSI:" + g);
  os << "\n";
  os << std::string(20 + 24 * groups.size(), '-') << "\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& row : rows) {
    os << std::left << std::setw(20) << row.label;
    for (const auto& g : groups)
      os << std::right << std::setw(12) << row.mean_dice_vsi.at(g).first;
    for (const auto& g : groups)
      os << std::right << std::setw(12) << row.mean_dice_vsi.at(g).second;
    os << "\n";
  }
  return os.str();
}

}  // namespace thalseg
