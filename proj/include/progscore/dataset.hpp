#pragma once

#include <string>
#include <vector>

#include "progscore/common.hpp"

namespace progscore {

/// Measurement sites with mm coordinates and optional region labels.
struct VoxelGrid {
  std::vector<std::string> voxel_ids;
  Mat positions;                        // K x 3, mm
  std::vector<std::string> roi_labels;  // empty, or one label per voxel ("" = unlabeled)

  int n_voxels() const { return static_cast<int>(voxel_ids.size()); }
  bool has_rois() const;

  double distance(int k, int kp) const {
    return (positions.row(k) - positions.row(kp)).norm();
  }
  Mat distance_matrix() const;

  /// Distinct non-empty labels, sorted; indices of voxels per label.
  std::vector<std::string> roi_names() const;
  std::vector<int> roi_voxels(const std::string& roi) const;
};

struct SubjectRecord {
  std::string id;
  int first_visit = 0;  // row index into Dataset::visits / Dataset::Y
  int n_visits = 0;
};

struct VisitRecord {
  int subject = 0;  // index into Dataset::subjects
  long visit_index = 0;
  double age = 0.0;  // years
};

/// Longitudinal multi-voxel dataset. Visits are grouped by subject and
/// sorted by age ascending within each subject; row j of Y holds the
/// measurements of visits[j]. Immutable after load.
struct Dataset {
  VoxelGrid grid;
  std::vector<SubjectRecord> subjects;
  std::vector<VisitRecord> visits;
  Mat Y;  // total visits x K

  int n_subjects() const { return static_cast<int>(subjects.size()); }
  int n_voxels() const { return grid.n_voxels(); }
  int total_visits() const { return static_cast<int>(visits.size()); }

  std::vector<double> ages_of(int subject) const;
};

Dataset load_dataset(const std::string& visits_path, const std::string& matrix_path,
                     const std::string& grid_path);

VoxelGrid load_grid_csv(const std::string& grid_path);

/// Loads visits + measurements against an existing grid (matrix columns
/// must match the grid's voxel ids in order). Scoring new data may pass
/// require_two_subjects = false.
Dataset assemble_dataset(VoxelGrid grid, const std::string& visits_path,
                         const std::string& matrix_path, bool require_two_subjects = true);

void save_dataset(const Dataset& d, const std::string& visits_path,
                  const std::string& matrix_path, const std::string& grid_path);

/// Empty iff every invariant holds; each violation names the offending
/// subject, visit, or voxel.
std::vector<std::string> validate_dataset(const Dataset& d);

}  // namespace progscore
