#pragma once

// Matrix-series bundles on disk, CSV ingestion and training-mean centering.
//
// A bundle directory holds manifest.json, x.bin (T*M*N little-endian f64,
// frame-major then row-major: offset t*M*N + i*N + j), z.bin (T*D f64,
// offset t*D + d) and optionally grid.json.

#include "marac/estimator.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace marac {

struct SeriesBundle {
  MatrixSeries series;
  Split split;
  std::optional<nlohmann::json> grid;  // contents of grid.json
  nlohmann::json manifest;
};

// Refuses to overwrite an existing manifest.json.
void write_bundle(const MatrixSeries& series, const Split& split, const std::string& dir,
                  const std::optional<nlohmann::json>& grid = std::nullopt);

// Throws FormatError naming the offending file or manifest field.
SeriesBundle read_bundle(const std::string& dir);

// x_csv: header then t,i,j,value rows; z_csv: header then t,d,value rows (may
// be empty for D = 0). Indices are 0-based and must cover a dense grid.
MatrixSeries ingest_csv(const std::string& x_csv, const std::string& z_csv = "");

struct Centering {
  Mat x_mean;
  Vec z_mean;
};

// Subtracts per-entry means of the training frames [0, train_end) from every
// frame, and likewise for the covariates.
std::pair<MatrixSeries, Centering> center_by_train_mean(const MatrixSeries& series, const Split& split);

// Adds the training mean back to a centered forecast.
Mat decenter(const Mat& forecast, const Centering& c);

}  // namespace marac
