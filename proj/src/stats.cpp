/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

namespace thalseg {

namespace detail {

namespace {

// Lentz's continued fraction for the incomplete beta (Numerical Recipes
// style).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  fail(ErrorKind::Numeric, "incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, ErrorKind::InvalidArgument, "beta parameters must be positive");
  require(x >= 0.0 && x <= 1.0, ErrorKind::InvalidArgument, "x must be in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double f_sf(double f, int df1, int df2) {
  require(df1 >= 1 && df2 >= 1, ErrorKind::InvalidArgument, "degrees of freedom must be >= 1");
  if (f <= 0.0) return 1.0;
  const double d1 = static_cast<double>(df1), d2 = static_cast<double>(df2);
  return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

double t_sf_two_sided(double t, int df) {
  require(df >= 1, ErrorKind::InvalidArgument, "degrees of freedom must be >= 1");
  const double nu = static_cast<double>(df);
  return incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cohort table
// ---------------------------------------------------------------------------

int CohortTable::column_index(const std::string& name) const {
  for (size_t i = 0; i < volume_columns.size(); ++i)
    if (volume_columns[i] == name) return static_cast<int>(i);
  return -1;
}

void CohortTable::validate() const {
  require(n() >= 4, ErrorKind::Validation, "cohort table needs at least 4 subjects");
  int g0 = 0, g1 = 0;
  for (int g : group) (g == 0 ? g0 : g1)++;
  require(g0 >= 2 && g1 >= 2, ErrorKind::Validation,
          cat("each group needs >= 2 subjects (got ", g0, " and ", g1, ")"));
  for (double v : age) require(std::isfinite(v), ErrorKind::Validation, "missing age covariate");
  for (double v : icv) require(std::isfinite(v), ErrorKind::Validation, "missing ICV covariate");
  for (const auto& col : volumes)
    require(col.size() == n(), ErrorKind::Validation, "ragged volume column");
}

CohortTable CohortTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, cat(path.string(), ": cannot open"));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format, "empty cohort table");

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == '\t') {
        out.push_back(cur);
        cur.clear();
      } else if (ch != '\r' && ch != '\n') {
        cur.push_back(ch);
      }
    }
    out.push_back(cur);
    return out;
  };

  const auto header = split(line);
  require(header.size() >= 7, ErrorKind::Format,
          "cohort table header needs subject_id, group, age, gender, pi, icv_mm3 and volumes");
  require(header[0] == "subject_id" && header[1] == "group", ErrorKind::Format,
          "cohort table must start with subject_id and group columns");

  CohortTable t;
  std::vector<int> volume_cols;
  for (size_t c = 6; c < header.size(); ++c) {
    t.volume_columns.push_back(header[c]);
    volume_cols.push_back(static_cast<int>(c));
    t.volumes.emplace_back();
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split(line);
    require(cols.size() == header.size(), ErrorKind::Format,
            cat(path.string(), ": row with ", cols.size(), " fields, expected ", header.size()));
    t.subject_ids.push_back(cols[0]);
    t.group.push_back(cols[1] == "control" || cols[1] == "CONTROL" ? 0 : 1);
    t.age.push_back(std::stod(cols[2]));
    t.gender.push_back(std::stod(cols[3]));
    t.pi.push_back(std::stod(cols[4]));
    t.icv.push_back(std::stod(cols[5]));
    for (size_t c = 0; c < volume_cols.size(); ++c)
      t.volumes[c].push_back(std::stod(cols[static_cast<size_t>(volume_cols[c])]));
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// ANCOVA
// ---------------------------------------------------------------------------

namespace {

double residual_ss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Eigen::VectorXd* beta_out) {
  const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
  if (beta_out) *beta_out = beta;
  return (y - X * beta).squaredNorm();
}

}  // namespace

AncovaEntry ancova(const CohortTable& table, const std::string& volume_column) {
  table.validate();
  const int col = table.column_index(volume_column);
  require(col >= 0, ErrorKind::InvalidArgument,
          cat("cohort table has no column '", volume_column, "'"));

  const int n = static_cast<int>(table.n());
  const int p_full = 6;  // intercept + group + 4 covariates
  require(n > p_full, ErrorKind::Validation,
          cat("need more subjects (", n, ") than model parameters (", p_full, ")"));

  Eigen::MatrixXd X(n, p_full);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = table.group[static_cast<size_t>(i)];
    X(i, 2) = table.age[static_cast<size_t>(i)];
    X(i, 3) = table.gender[static_cast<size_t>(i)];
    X(i, 4) = table.pi[static_cast<size_t>(i)];
    X(i, 5) = table.icv[static_cast<size_t>(i)];
    y(i) = table.volumes[static_cast<size_t>(col)][static_cast<size_t>(i)];
  }

  const auto qr = X.colPivHouseholderQr();
  if (qr.rank() < p_full) {
    static const char* names[] = {"intercept", "group", "age", "gender", "pi", "icv"};
    std::string collinear;
    for (int c = 1; c < p_full; ++c) {
      const double var = (X.col(c).array() - X.col(c).mean()).matrix().squaredNorm();
      if (var < 1e-24) collinear += std::string(collinear.empty() ? "" : ", ") + names[c];
    }
    if (collinear.empty()) collinear = "age/gender/pi/icv (linearly dependent)";
    fail(ErrorKind::Validation, cat("ANCOVA design matrix is rank deficient; collinear columns: ",
                                    collinear));
  }

  Eigen::VectorXd beta;
  const double rss_full = residual_ss(X, y, &beta);

  Eigen::MatrixXd Xr(n, p_full - 1);
  Xr << X.col(0), X.col(2), X.col(3), X.col(4), X.col(5);
  const double rss_reduced = residual_ss(Xr, y, nullptr);

  AncovaEntry e;
  e.structure = volume_column;
  e.df1 = 1;
  e.df2 = n - p_full;
  const double denom = rss_full / static_cast<double>(e.df2);
  e.f_stat = denom > 0.0 ? std::max(0.0, (rss_reduced - rss_full)) / denom : 0.0;
  e.p = detail::f_sf(e.f_stat, e.df1, e.df2);

  // group means adjusted to grand-mean covariates
  const double base = beta(0) + beta(2) * X.col(2).mean() + beta(3) * X.col(3).mean() +
                      beta(4) * X.col(4).mean() + beta(5) * X.col(5).mean();
  e.adjusted_mean_control = base;
  e.adjusted_mean_group = base + beta(1);
  return e;
}

AncovaRunResult ancova_all(const CohortTable& table, double alpha, int comparisons) {
  AncovaRunResult res;
  res.alpha = alpha;
  res.comparisons = comparisons;
  res.bonferroni_alpha = bonferroni(alpha, comparisons);
  for (const auto& colname : table.volume_columns) res.entries.push_back(ancova(table, colname));
  return res;
}

std::string AncovaRunResult::render() const {
  std::ostringstream os;
  os << "ANCOVA group comparison (volume ~ group + age + gender + PI + ICV)\n";
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%-20s F[%d,%d] = %.3g, p = %.4g%s\n", e.structure.c_str(),
                  e.df1, e.df2, e.f_stat, e.p, e.p < bonferroni_alpha ? "  *" : "");
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "* significant after Bonferroni correction: alpha %.3g / %d = %.3g\n", alpha,
                comparisons, bonferroni_alpha);
  os << buf;
  return os.str();
}

std::string AncovaRunResult::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha;
  j["comparisons"] = comparisons;
  j["bonferroni_alpha"] = bonferroni_alpha;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"structure", e.structure},
                            {"f", e.f_stat},
                            {"df1", e.df1},
                            {"df2", e.df2},
                            {"p", e.p},
                            {"adjusted_mean_control", e.adjusted_mean_control},
                            {"adjusted_mean_group", e.adjusted_mean_group},
                            {"significant", e.p < bonferroni_alpha}});
  return j.dump(2);
}

double bonferroni(double alpha, int m) {
  require(m >= 1, ErrorKind::InvalidArgument, "m must be >= 1");
  require(alpha > 0.0 && alpha <= 1.0, ErrorKind::InvalidArgument, "alpha must be in (0, 1]");
  return alpha / static_cast<double>(m);
}

double bilateral_average(double left_vol, double right_vol) {
  require(left_vol >= 0.0 && right_vol >= 0.0, ErrorKind::InvalidArgument,
          "volumes must be >= 0");
  return 0.5 * (left_vol + right_vol);
}

PairedTestResult paired_metric_test(const std::vector<double>& metric_a,
                                    const std::vector<double>& metric_b) {
  require(metric_a.size() == metric_b.size(), ErrorKind::InvalidArgument,
          "paired arrays must have equal length");
  const int n = static_cast<int>(metric_a.size());
  require(n >= 3, ErrorKind::InvalidArgument, "paired test needs n >= 3");

  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += metric_a[static_cast<size_t>(i)] - metric_b[static_cast<size_t>(i)];
  mean /= n;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = metric_a[static_cast<size_t>(i)] - metric_b[static_cast<size_t>(i)] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1));

  PairedTestResult r;
  r.df = n - 1;
  if (sd == 0.0) {
    r.zero_variance = true;
    r.t_stat = 0.0;
    r.p = 1.0;
    return r;
  }
  r.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = detail::t_sf_two_sided(r.t_stat, r.df);
  return r;
}

}  // namespace thalseg
