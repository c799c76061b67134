#include "progscore/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "progscore/io_util.hpp"

namespace progscore {

bool VoxelGrid::has_rois() const {
  if (roi_labels.empty()) return false;
  for (const auto& l : roi_labels)
    if (!l.empty()) return true;
  return false;
}

Mat VoxelGrid::distance_matrix() const {
  const int k = n_voxels();
  Mat d(k, k);
  for (int i = 0; i < k; ++i) {
    d(i, i) = 0.0;
    for (int j = i + 1; j < k; ++j) {
      d(i, j) = d(j, i) = distance(i, j);
    }
  }
  return d;
}

std::vector<std::string> VoxelGrid::roi_names() const {
  std::set<std::string> names;
  for (const auto& l : roi_labels)
    if (!l.empty()) names.insert(l);
  return std::vector<std::string>(names.begin(), names.end());
}

std::vector<int> VoxelGrid::roi_voxels(const std::string& roi) const {
  std::vector<int> out;
  for (int k = 0; k < n_voxels(); ++k)
    if (k < static_cast<int>(roi_labels.size()) && roi_labels[k] == roi) out.push_back(k);
  return out;
}

std::vector<double> Dataset::ages_of(int subject) const {
  const auto& s = subjects.at(subject);
  std::vector<double> ages(s.n_visits);
  for (int j = 0; j < s.n_visits; ++j) ages[j] = visits[s.first_visit + j].age;
  return ages;
}

namespace {

std::string where(const CsvTable& t, std::size_t row, const std::string& col) {
  return t.path + ":" + std::to_string(t.row_lines[row]) + ": column '" + col + "'";
}

int header_index(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return static_cast<int>(i);
  throw DataError(t.path + ": missing required column '" + name + "'");
}

VoxelGrid load_grid_impl(const std::string& path) {
  CsvTable t = read_csv(path);
  const int ci = header_index(t, "voxel_id");
  const int cx = header_index(t, "x_mm");
  const int cy = header_index(t, "y_mm");
  const int cz = header_index(t, "z_mm");
  int croi = -1;
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == "roi_label") croi = static_cast<int>(i);

  VoxelGrid g;
  const int k = static_cast<int>(t.rows.size());
  if (k == 0) throw DataError(path + ": grid has no voxels");
  g.positions.resize(k, 3);
  std::set<std::string> seen;
  for (int r = 0; r < k; ++r) {
    const auto& row = t.rows[r];
    const std::string& id = row[ci];
    if (id.empty()) throw DataError(where(t, r, "voxel_id") + ": empty voxel id");
    if (!seen.insert(id).second)
      throw DataError(where(t, r, "voxel_id") + ": duplicate voxel id '" + id + "'");
    g.voxel_ids.push_back(id);
    g.positions(r, 0) = parse_csv_double(row[cx], where(t, r, "x_mm"));
    g.positions(r, 1) = parse_csv_double(row[cy], where(t, r, "y_mm"));
    g.positions(r, 2) = parse_csv_double(row[cz], where(t, r, "z_mm"));
    if (croi >= 0) g.roi_labels.push_back(row[croi]);
  }
  return g;
}

}  // namespace

VoxelGrid load_grid_csv(const std::string& grid_path) { return load_grid_impl(grid_path); }

Dataset load_dataset(const std::string& visits_path, const std::string& matrix_path,
                     const std::string& grid_path) {
  return assemble_dataset(load_grid_impl(grid_path), visits_path, matrix_path);
}

Dataset assemble_dataset(VoxelGrid grid, const std::string& visits_path,
                         const std::string& matrix_path, bool require_two_subjects) {
  Dataset d;
  d.grid = std::move(grid);
  const int K = d.grid.n_voxels();

  CsvTable vt = read_csv(visits_path);
  const int cs = header_index(vt, "subject_id");
  const int cv = header_index(vt, "visit_index");
  const int ca = header_index(vt, "age");

  struct RawVisit {
    std::string subject_id;
    long visit_index;
    double age;
    std::size_t input_row;  // row in visits/matrix files
  };
  std::vector<RawVisit> raw;
  raw.reserve(vt.rows.size());
  for (std::size_t r = 0; r < vt.rows.size(); ++r) {
    RawVisit v;
    v.subject_id = vt.rows[r][cs];
    if (v.subject_id.empty()) throw DataError(where(vt, r, "subject_id") + ": empty subject id");
    v.visit_index = parse_csv_long(vt.rows[r][cv], where(vt, r, "visit_index"));
    if (v.visit_index < 1)
      throw DataError(where(vt, r, "visit_index") + ": visit_index must be >= 1");
    v.age = parse_csv_double(vt.rows[r][ca], where(vt, r, "age"));
    v.input_row = r;
    raw.push_back(std::move(v));
  }

  CsvTable mt = read_csv(matrix_path);
  if (static_cast<int>(mt.header.size()) != K) {
    throw DataError(matrix_path + ": header has " + std::to_string(mt.header.size()) +
                    " voxel columns but grid defines " + std::to_string(K));
  }
  for (int k = 0; k < K; ++k) {
    if (mt.header[k] != d.grid.voxel_ids[k]) {
      throw DataError(matrix_path + ": column " + std::to_string(k + 1) + " is '" +
                      mt.header[k] + "' but grid row " + std::to_string(k + 1) + " is '" +
                      d.grid.voxel_ids[k] + "' (matrix columns must match grid order)");
    }
  }
  if (mt.rows.size() != raw.size()) {
    throw DataError(matrix_path + ": row count mismatch: matrix has " +
                    std::to_string(mt.rows.size()) + " data rows, visits file has " +
                    std::to_string(raw.size()));
  }

  Mat y(raw.size(), K);
  for (std::size_t r = 0; r < mt.rows.size(); ++r) {
    for (int k = 0; k < K; ++k) {
      y(r, k) = parse_csv_double(mt.rows[r][k], where(mt, r, mt.header[k]));
    }
  }

  // Group by subject in first-appearance order, sort visits by age.
  std::vector<std::string> order;
  std::map<std::string, std::vector<int>> by_subject;
  for (std::size_t r = 0; r < raw.size(); ++r) {
    auto [it, inserted] = by_subject.try_emplace(raw[r].subject_id);
    if (inserted) order.push_back(raw[r].subject_id);
    it->second.push_back(static_cast<int>(r));
  }
  if (require_two_subjects && order.size() < 2)
    throw DataError(visits_path + ": need at least 2 subjects, got " +
                    std::to_string(order.size()));
  if (order.empty()) throw DataError(visits_path + ": no visits");

  d.Y.resize(raw.size(), K);
  int out_row = 0;
  for (const auto& sid : order) {
    auto& rows = by_subject[sid];
    std::stable_sort(rows.begin(), rows.end(),
                     [&](int a, int b) { return raw[a].age < raw[b].age; });
    SubjectRecord rec;
    rec.id = sid;
    rec.first_visit = out_row;
    rec.n_visits = static_cast<int>(rows.size());
    std::set<long> indices;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const RawVisit& v = raw[rows[j]];
      if (j > 0) {
        const RawVisit& prev = raw[rows[j - 1]];
        if (v.age == prev.age) {
          throw DataError(visits_path + ":" + std::to_string(vt.row_lines[v.input_row]) +
                          ": subject '" + sid + "' has two visits at identical age " +
                          format_double(v.age));
        }
        if (v.visit_index <= prev.visit_index) {
          throw DataError(visits_path + ":" + std::to_string(vt.row_lines[v.input_row]) +
                          ": subject '" + sid +
                          "': visit_index must increase with age (got " +
                          std::to_string(v.visit_index) + " after " +
                          std::to_string(prev.visit_index) + ")");
        }
      }
      if (!indices.insert(v.visit_index).second) {
        throw DataError(visits_path + ":" + std::to_string(vt.row_lines[v.input_row]) +
                        ": duplicate (subject_id, visit_index) = ('" + sid + "', " +
                        std::to_string(v.visit_index) + ")");
      }
      d.visits.push_back({static_cast<int>(d.subjects.size()), v.visit_index, v.age});
      d.Y.row(out_row) = y.row(rows[j]);
      ++out_row;
    }
    d.subjects.push_back(std::move(rec));
  }
  return d;
}

void save_dataset(const Dataset& d, const std::string& visits_path,
                  const std::string& matrix_path, const std::string& grid_path) {
  std::ostringstream vs;
  vs << "subject_id,visit_index,age\n";
  for (const auto& v : d.visits) {
    vs << d.subjects[v.subject].id << ',' << v.visit_index << ',' << format_double(v.age)
       << '\n';
  }
  atomic_write_file(visits_path, vs.str());

  std::ostringstream ms;
  for (int k = 0; k < d.n_voxels(); ++k) {
    if (k) ms << ',';
    ms << d.grid.voxel_ids[k];
  }
  ms << '\n';
  for (int r = 0; r < d.total_visits(); ++r) {
    for (int k = 0; k < d.n_voxels(); ++k) {
      if (k) ms << ',';
      ms << format_double(d.Y(r, k));
    }
    ms << '\n';
  }
  atomic_write_file(matrix_path, ms.str());

  std::ostringstream gs;
  const bool rois = !d.grid.roi_labels.empty();
  gs << "voxel_id,x_mm,y_mm,z_mm" << (rois ? ",roi_label" : "") << '\n';
  for (int k = 0; k < d.n_voxels(); ++k) {
    gs << d.grid.voxel_ids[k] << ',' << format_double(d.grid.positions(k, 0)) << ','
       << format_double(d.grid.positions(k, 1)) << ',' << format_double(d.grid.positions(k, 2));
    if (rois) gs << ',' << d.grid.roi_labels[k];
    gs << '\n';
  }
  atomic_write_file(grid_path, gs.str());
}

std::vector<std::string> validate_dataset(const Dataset& d) {
  std::vector<std::string> v;
  const int K = d.n_voxels();

  std::set<std::string> ids;
  for (int k = 0; k < K; ++k) {
    if (!ids.insert(d.grid.voxel_ids[k]).second)
      v.push_back("grid: duplicate voxel_id '" + d.grid.voxel_ids[k] + "'");
    for (int c = 0; c < 3; ++c) {
      if (!std::isfinite(d.grid.positions(k, c))) {
        v.push_back("grid: voxel '" + d.grid.voxel_ids[k] + "' has non-finite position");
        break;
      }
    }
  }
  if (!d.grid.roi_labels.empty() && static_cast<int>(d.grid.roi_labels.size()) != K)
    v.push_back("grid: roi_labels length differs from voxel count");

  if (d.n_subjects() < 2) v.push_back("dataset: fewer than 2 subjects");
  if (d.Y.rows() != d.total_visits())
    v.push_back("dataset: measurement rows differ from visit count");
  if (d.Y.cols() != K) v.push_back("dataset: measurement columns differ from voxel count");

  int expected_row = 0;
  for (int i = 0; i < d.n_subjects(); ++i) {
    const auto& s = d.subjects[i];
    if (s.n_visits < 1) v.push_back("subject '" + s.id + "': no visits");
    if (s.first_visit != expected_row)
      v.push_back("subject '" + s.id + "': visits not contiguous");
    expected_row += s.n_visits;
    for (int j = 0; j < s.n_visits; ++j) {
      const auto& visit = d.visits[s.first_visit + j];
      if (visit.subject != i)
        v.push_back("subject '" + s.id + "': visit row assigned to wrong subject");
      if (j > 0) {
        const auto& prev = d.visits[s.first_visit + j - 1];
        if (!(visit.age > prev.age))
          v.push_back("subject '" + s.id + "': visit " + std::to_string(visit.visit_index) +
                      " age not strictly increasing");
        if (!(visit.visit_index > prev.visit_index))
          v.push_back("subject '" + s.id + "': visit_index not strictly increasing");
      }
    }
  }
  for (int r = 0; r < d.total_visits() && r < d.Y.rows(); ++r) {
    for (int k = 0; k < K; ++k) {
      if (!std::isfinite(d.Y(r, k))) {
        const auto& visit = d.visits[r];
        v.push_back("subject '" + d.subjects[visit.subject].id + "' visit " +
                    std::to_string(visit.visit_index) + " voxel '" + d.grid.voxel_ids[k] +
                    "': non-finite measurement");
      }
    }
  }
  return v;
}

}  // namespace progscore
