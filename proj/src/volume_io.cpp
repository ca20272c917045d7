/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace thalseg {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {            // offset
  int32_t sizeof_hdr;            // 0    must be 348
  char data_type[10];            // 4
  char db_name[18];              // 14
  int32_t extents;               // 32
  int16_t session_error;         // 36
  char regular;                  // 38
  char dim_info;                 // 39
  int16_t dim[8];                // 40
  float intent_p1;               // 56
  float intent_p2;               // 60
  float intent_p3;               // 64
  int16_t intent_code;           // 68
  int16_t datatype;              // 70
  int16_t bitpix;                // 72
  int16_t slice_start;           // 74
  float pixdim[8];               // 76
  float vox_offset;              // 108
  float scl_slope;               // 112
  float scl_inter;               // 116
  int16_t slice_end;             // 120
  char slice_code;               // 122
  char xyzt_units;               // 123
  float cal_max;                 // 124
  float cal_min;                 // 128
  float slice_duration;          // 132
  float toffset;                 // 136
  int32_t glmax;                 // 140
  int32_t glmin;                 // 144
  char descrip[80];              // 148
  char aux_file[24];             // 228
  int16_t qform_code;            // 252
  int16_t sform_code;            // 254
  float quatern_b;               // 256
  float quatern_c;               // 260
  float quatern_d;               // 264
  float qoffset_x;               // 268
  float qoffset_y;               // 272
  float qoffset_z;               // 276
  float srow_x[4];               // 280
  float srow_y[4];               // 296
  float srow_z[4];               // 312
  char intent_name[16];          // 328
  char magic[4];                 // 344
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr const char* kLabelIntent = "labels";

int bitpix_of(VoxelType t) {
  switch (t) {
    case VoxelType::U8: return 8;
    case VoxelType::I16: return 16;
    case VoxelType::I32: return 32;
    case VoxelType::F32: return 32;
    case VoxelType::F64: return 64;
  }
  return 0;
}

bool supported_datatype(int code) {
  return code == 2 || code == 4 || code == 8 || code == 16 || code == 64;
}

template <class T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

void swap_header(Nifti1Header& h) {
  swap_bytes(h.sizeof_hdr);
  swap_bytes(h.extents);
  swap_bytes(h.session_error);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.intent_p1);
  swap_bytes(h.intent_p2);
  swap_bytes(h.intent_p3);
  swap_bytes(h.intent_code);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  swap_bytes(h.slice_start);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
  swap_bytes(h.slice_end);
  swap_bytes(h.cal_max);
  swap_bytes(h.cal_min);
  swap_bytes(h.slice_duration);
  swap_bytes(h.toffset);
  swap_bytes(h.glmax);
  swap_bytes(h.glmin);
  swap_bytes(h.qform_code);
  swap_bytes(h.sform_code);
  swap_bytes(h.quatern_b);
  swap_bytes(h.quatern_c);
  swap_bytes(h.quatern_d);
  swap_bytes(h.qoffset_x);
  swap_bytes(h.qoffset_y);
  swap_bytes(h.qoffset_z);
  for (auto& s : h.srow_x) swap_bytes(s);
  for (auto& s : h.srow_y) swap_bytes(s);
  for (auto& s : h.srow_z) swap_bytes(s);
}

struct GzFile {
  gzFile f = nullptr;
  explicit GzFile(const std::filesystem::path& path, const char* mode) {
    f = gzopen(path.string().c_str(), mode);
  }
  ~GzFile() {
    if (f) gzclose(f);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
};

void read_exact(gzFile f, void* dst, size_t n, const std::filesystem::path& path) {
  size_t done = 0;
  auto* p = static_cast<unsigned char*>(dst);
  while (done < n) {
    const unsigned chunk = static_cast<unsigned>(std::min<size_t>(n - done, 1u << 30));
    const int got = gzread(f, p + done, chunk);
    require(got > 0, ErrorKind::Format,
            cat(path.string(), ": truncated or corrupt data section (expected ", n,
                " bytes, got ", done, ")"));
    done += static_cast<size_t>(got);
  }
}

void write_exact(gzFile f, const void* src, size_t n, const std::filesystem::path& path) {
  size_t done = 0;
  const auto* p = static_cast<const unsigned char*>(src);
  while (done < n) {
    const unsigned chunk = static_cast<unsigned>(std::min<size_t>(n - done, 1u << 30));
    const int wrote = gzwrite(f, p + done, chunk);
    require(wrote > 0, ErrorKind::Io, cat(path.string(), ": write failed"));
    done += static_cast<size_t>(wrote);
  }
}

Affine affine_from_quaternion(const Nifti1Header& h) {
  const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
  double a = 1.0 - (b * b + c * c + d * d);
  a = a < 1e-7 ? 0.0 : std::sqrt(a);
  const double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d, 2 * b * d + 2 * a * c,
      2 * b * c + 2 * a * d, a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b,
      2 * b * d - 2 * a * c, 2 * c * d + 2 * a * b, a * a + d * d - c * c - b * b;
  Affine m = Affine::Identity();
  for (int col = 0; col < 3; ++col) {
    const double sp = (col == 2 ? qfac : 1.0) * static_cast<double>(h.pixdim[col + 1]);
    m.block<3, 1>(0, col) = r.col(col) * sp;
  }
  m(0, 3) = h.qoffset_x;
  m(1, 3) = h.qoffset_y;
  m(2, 3) = h.qoffset_z;
  return m;
}

struct RawImage {
  Geometry geo;
  VoxelType dtype;
  std::vector<double> values;
  bool label_hint = false;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
};

template <class T>
void convert_to_double(const std::vector<char>& raw, std::vector<double>& out) {
  const auto* p = reinterpret_cast<const T*>(raw.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(p[i]);
}

template <class T>
void swap_buffer(std::vector<char>& raw) {
  auto* p = reinterpret_cast<T*>(raw.data());
  const size_t n = raw.size() / sizeof(T);
  for (size_t i = 0; i < n; ++i) swap_bytes(p[i]);
}

RawImage read_raw(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  require(std::filesystem::exists(path), ErrorKind::Io,
          cat(path.string(), ": file does not exist"));
  GzFile gf(path, "rb");
  require(gf.f != nullptr, ErrorKind::Io, cat(path.string(), ": cannot open"));

  Nifti1Header h{};
  read_exact(gf.f, &h, sizeof(h), path);
  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swapped = true;
    require(h.sizeof_hdr == 348, ErrorKind::Format,
            cat(path.string(), ": not a NIfTI-1 file (bad header size)"));
  }
  const bool magic_ok = std::memcmp(h.magic, "n+1", 3) == 0 || std::memcmp(h.magic, "ni1", 3) == 0;
  require(magic_ok, ErrorKind::Format, cat(path.string(), ": bad NIfTI magic bytes"));
  require(std::memcmp(h.magic, "n+1", 3) == 0, ErrorKind::Format,
          cat(path.string(), ": two-file (.hdr/.img) NIfTI is not supported"));
  require(h.dim[0] >= 1 && h.dim[0] <= 7, ErrorKind::Format,
          cat(path.string(), ": invalid dim[0] = ", h.dim[0]));
  require(h.dim[0] <= 3 || (h.dim[4] <= 1 && h.dim[5] <= 1), ErrorKind::Format,
          cat(path.string(), ": 4D+ images are not supported"));
  require(supported_datatype(h.datatype), ErrorKind::Format,
          cat(path.string(), ": unsupported NIfTI datatype code ", h.datatype,
              " (supported: 2=uint8, 4=int16, 8=int32, 16=float32, 64=float64)"));

  RawImage img;
  img.dtype = static_cast<VoxelType>(h.datatype);
  for (int k = 0; k < 3; ++k) {
    const int16_t d = h.dim[k + 1];
    require(d >= 1, ErrorKind::Format, cat(path.string(), ": non-positive dim[", k + 1, "]"));
    img.geo.shape[k] = d;
    img.geo.spacing[k] = h.pixdim[k + 1] > 0.0f ? static_cast<double>(h.pixdim[k + 1]) : 1.0;
  }

  if (h.sform_code > 0) {
    Affine m = Affine::Identity();
    for (int col = 0; col < 4; ++col) {
      m(0, col) = h.srow_x[col];
      m(1, col) = h.srow_y[col];
      m(2, col) = h.srow_z[col];
    }
    img.geo.affine = m;
    if (h.qform_code > 0 && warnings) {
      const Affine q = affine_from_quaternion(h);
      if ((q - m).cwiseAbs().maxCoeff() > 1e-3)
        warnings->push_back(cat(path.string(), ": sform and qform disagree; using sform"));
    }
  } else if (h.qform_code > 0) {
    img.geo.affine = affine_from_quaternion(h);
  } else {
    Affine m = Affine::Identity();
    for (int k = 0; k < 3; ++k) m(k, k) = img.geo.spacing[k];
    img.geo.affine = m;
    if (warnings) warnings->push_back(cat(path.string(), ": no sform/qform; assuming identity axes"));
  }
  img.geo.orientation = Orientation::from_affine(img.geo.affine);
  img.label_hint = std::strncmp(h.intent_name, kLabelIntent, sizeof(h.intent_name)) == 0;
  img.scl_slope = h.scl_slope;
  img.scl_inter = h.scl_inter;

  const int64_t voxels = img.geo.voxels();
  const size_t elem = static_cast<size_t>(bitpix_of(img.dtype)) / 8;
  const int64_t offset = static_cast<int64_t>(h.vox_offset);
  require(offset >= 348, ErrorKind::Format, cat(path.string(), ": vox_offset < 348"));
  // skip any header extensions
  std::vector<char> skip(static_cast<size_t>(offset - 348));
  if (!skip.empty()) read_exact(gf.f, skip.data(), skip.size(), path);

  std::vector<char> raw(static_cast<size_t>(voxels) * elem);
  read_exact(gf.f, raw.data(), raw.size(), path);
  if (swapped) {
    switch (img.dtype) {
      case VoxelType::U8: break;
      case VoxelType::I16: swap_buffer<int16_t>(raw); break;
      case VoxelType::I32: swap_buffer<int32_t>(raw); break;
      case VoxelType::F32: swap_buffer<float>(raw); break;
      case VoxelType::F64: swap_buffer<double>(raw); break;
    }
  }
  img.values.resize(static_cast<size_t>(voxels));
  switch (img.dtype) {
    case VoxelType::U8: convert_to_double<uint8_t>(raw, img.values); break;
    case VoxelType::I16: convert_to_double<int16_t>(raw, img.values); break;
    case VoxelType::I32: convert_to_double<int32_t>(raw, img.values); break;
    case VoxelType::F32: convert_to_double<float>(raw, img.values); break;
    case VoxelType::F64: convert_to_double<double>(raw, img.values); break;
  }
  return img;
}

void apply_scaling(RawImage& img, std::vector<std::string>* warnings,
                   const std::filesystem::path& path) {
  const float s = img.scl_slope, b = img.scl_inter;
  if (s != 0.0f && (s != 1.0f || b != 0.0f)) {
    for (double& v : img.values) v = v * static_cast<double>(s) + static_cast<double>(b);
    img.dtype = VoxelType::F32;  // values no longer match the stored integers
    if (warnings)
      warnings->push_back(cat(path.string(), ": applied scl_slope/scl_inter; dtype now float32"));
  }
}

void fill_header(Nifti1Header& h, const Geometry& g, VoxelType dtype, bool labels) {
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  for (int k = 0; k < 3; ++k) h.dim[k + 1] = static_cast<int16_t>(g.shape[k]);
  for (int k = 4; k < 8; ++k) h.dim[k] = 1;
  h.datatype = static_cast<int16_t>(dtype);
  h.bitpix = static_cast<int16_t>(bitpix_of(dtype));
  h.pixdim[0] = 1.0f;
  for (int k = 0; k < 3; ++k) h.pixdim[k + 1] = static_cast<float>(g.spacing[k]);
  for (int k = 4; k < 8; ++k) h.pixdim[k] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 0.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2 | 8;  // mm, sec
  h.sform_code = 1;
  h.qform_code = 0;
  for (int col = 0; col < 4; ++col) {
    h.srow_x[col] = static_cast<float>(g.affine(0, col));
    h.srow_y[col] = static_cast<float>(g.affine(1, col));
    h.srow_z[col] = static_cast<float>(g.affine(2, col));
  }
  if (labels) std::strncpy(h.intent_name, kLabelIntent, sizeof(h.intent_name) - 1);
  std::memcpy(h.magic, "n+1", 4);
}

bool gz_suffix(const std::filesystem::path& path) {
  const std::string s = path.string();
  return s.size() > 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

template <class T>
std::vector<char> encode(const std::vector<double>& values) {
  std::vector<char> raw(values.size() * sizeof(T));
  auto* p = reinterpret_cast<T*>(raw.data());
  for (size_t i = 0; i < values.size(); ++i) p[i] = static_cast<T>(values[i]);
  return raw;
}

void write_raw(const std::filesystem::path& path, const Geometry& geo, VoxelType dtype,
               const std::vector<double>& values, bool labels) {
  const auto parent = path.parent_path();
  require(parent.empty() || std::filesystem::exists(parent), ErrorKind::Io,
          cat(path.string(), ": parent directory does not exist"));

  Nifti1Header h;
  fill_header(h, geo, dtype, labels);

  std::vector<char> raw;
  switch (dtype) {
    case VoxelType::U8: raw = encode<uint8_t>(values); break;
    case VoxelType::I16: raw = encode<int16_t>(values); break;
    case VoxelType::I32: raw = encode<int32_t>(values); break;
    case VoxelType::F32: raw = encode<float>(values); break;
    case VoxelType::F64: raw = encode<double>(values); break;
  }

  // "wT" writes through without gzip framing; plain .nii stays plain.
  GzFile gf(path, gz_suffix(path) ? "wb6" : "wbT");
  require(gf.f != nullptr, ErrorKind::Io, cat(path.string(), ": cannot open for writing"));
  write_exact(gf.f, &h, sizeof(h), path);
  const char pad[4] = {0, 0, 0, 0};
  write_exact(gf.f, pad, 4, path);  // extension flag
  write_exact(gf.f, raw.data(), raw.size(), path);
}

}  // namespace

Volume read_volume(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  RawImage img = read_raw(path, warnings);
  apply_scaling(img, warnings, path);
  return Volume(img.geo, std::move(img.values), Contrast::SYNTHETIC, img.dtype);
}

LabelMap read_labelmap(const std::filesystem::path& path, const Taxonomy& tax,
                       std::vector<std::string>* warnings) {
  RawImage img = read_raw(path, warnings);
  require(img.dtype == VoxelType::U8 || img.dtype == VoxelType::I16 ||
              img.dtype == VoxelType::I32,
          ErrorKind::Format,
          cat(path.string(), ": label maps require an integer datatype"));
  std::vector<int32_t> labels(img.values.size());
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int32_t>(img.values[i]);
  return LabelMap(img.geo, std::move(labels), &tax, img.dtype);
}

std::variant<Volume, LabelMap> read_nifti(const std::filesystem::path& path,
                                          std::vector<std::string>* warnings) {
  RawImage img = read_raw(path, warnings);
  const bool integer = img.dtype == VoxelType::U8 || img.dtype == VoxelType::I16 ||
                       img.dtype == VoxelType::I32;
  if (integer && img.label_hint) {
    std::vector<int32_t> labels(img.values.size());
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int32_t>(img.values[i]);
    return LabelMap(img.geo, std::move(labels), &Taxonomy::nuclei(), img.dtype);
  }
  apply_scaling(img, warnings, path);
  return Volume(img.geo, std::move(img.values), Contrast::SYNTHETIC, img.dtype);
}

void write_nifti(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  write_raw(path, v.geo(), v.dtype(), v.data(), false);
}

void write_nifti(const LabelMap& m, const std::filesystem::path& path) {
  m.validate();
  std::vector<double> values(m.labels().begin(), m.labels().end());
  write_raw(path, m.geo(), m.dtype(), values, true);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string to_string(Cohort c) {
  switch (c) {
    case Cohort::CONTROL: return "control";
    case Cohort::MS: return "ms";
    case Cohort::ET: return "et";
    case Cohort::SYNTHETIC: return "synthetic";
  }
  return "synthetic";
}

Cohort cohort_from_string(std::string_view s) {
  if (s == "control" || s == "CONTROL") return Cohort::CONTROL;
  if (s == "ms" || s == "MS" || s == "ms-like" || s == "ms_like") return Cohort::MS;
  if (s == "et" || s == "ET" || s == "et-like" || s == "et_like") return Cohort::ET;
  if (s == "synthetic" || s == "SYNTHETIC") return Cohort::SYNTHETIC;
  fail(ErrorKind::Validation, cat("unknown cohort tag '", s, "'"));
}

std::string to_string(FieldStrength f) {
  switch (f) {
    case FieldStrength::T3: return "3T";
    case FieldStrength::T7: return "7T";
    case FieldStrength::NA: return "NA";
  }
  return "NA";
}

FieldStrength field_from_string(std::string_view s) {
  if (s == "3T" || s == "t3" || s == "T3") return FieldStrength::T3;
  if (s == "7T" || s == "t7" || s == "T7") return FieldStrength::T7;
  if (s == "NA" || s == "na") return FieldStrength::NA;
  fail(ErrorKind::Validation, cat("unknown field strength '", s, "'"));
}

size_t DatasetManifest::cohort_count(Cohort c) const {
  size_t n = 0;
  for (const auto& e : entries)
    if (e.cohort == c) ++n;
  return n;
}

namespace {
std::vector<std::string> split_tsv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, cat(path.string(), ": cannot open manifest"));
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

  DatasetManifest m;
  std::vector<std::string> problems;
  std::string line;
  size_t lineno = 0;
  bool header_seen = false;
  std::vector<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split_tsv(line);
    if (!header_seen) {
      header_seen = true;
      if (cols.size() < 6 || cols[0] != "subject_id")
        problems.push_back(cat("line ", lineno,
                               ": expected header 'subject_id\timage\tlabels\tcohort\tfield\t"
                               "contrast'"));
      continue;
    }
    if (cols.size() < 6) {
      problems.push_back(cat("line ", lineno, ": expected 6 tab-separated fields, got ",
                             cols.size()));
      continue;
    }
    ManifestEntry e;
    e.subject_id = cols[0];
    if (std::find(ids.begin(), ids.end(), e.subject_id) != ids.end())
      problems.push_back(cat("line ", lineno, ": duplicate subject_id '", e.subject_id, "'"));
    ids.push_back(e.subject_id);
    e.image_path = std::filesystem::weakly_canonical(base / cols[1]);
    if (!std::filesystem::exists(e.image_path))
      problems.push_back(cat("line ", lineno, ": image file missing: ", e.image_path.string()));
    if (cols[2] != "-" && !cols[2].empty()) {
      e.label_path = std::filesystem::weakly_canonical(base / cols[2]);
      if (!std::filesystem::exists(*e.label_path))
        problems.push_back(cat("line ", lineno, ": label file missing: ", e.label_path->string()));
    }
    try {
      e.cohort = cohort_from_string(cols[3]);
    } catch (const Error& err) {
      problems.push_back(cat("line ", lineno, ": ", err.what()));
    }
    try {
      e.field = field_from_string(cols[4]);
    } catch (const Error& err) {
      problems.push_back(cat("line ", lineno, ": ", err.what()));
    }
    try {
      e.contrast = contrast_from_string(cols[5]);
    } catch (const Error& err) {
      problems.push_back(cat("line ", lineno, ": ", err.what()));
    }
    m.entries.push_back(std::move(e));
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << path.string() << ": manifest validation failed:";
    for (const auto& p : problems) os << "\n  - " << p;
    fail(ErrorKind::Validation, os.str());
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, cat(path.string(), ": cannot open for writing"));
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  out << "subject_id\timage\tlabels\tcohort\tfield\tcontrast\n";
  for (const auto& e : m.entries) {
    out << e.subject_id << '\t' << std::filesystem::relative(e.image_path, base).string() << '\t'
        << (e.label_path ? std::filesystem::relative(*e.label_path, base).string() : "-") << '\t'
        << to_string(e.cohort) << '\t' << to_string(e.field) << '\t' << to_string(e.contrast)
        << '\n';
  }
  require(out.good(), ErrorKind::Io, cat(path.string(), ": write failed"));
}

}  // namespace thalseg
