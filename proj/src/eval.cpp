#include "vifg/eval.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vifg {

std::vector<TrajectoryPoint> read_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file: " + path);
  std::vector<TrajectoryPoint> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) continue;
    out.push_back({t, RigidTransform(Rotation3(Eigen::Quaterniond(qw, qx, qy, qz)),
                                     Vec3(tx, ty, tz))});
  }
  return out;
}

void write_tum(const std::string& path, const std::vector<TrajectoryPoint>& traj) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trajectory file: " + path);
  char buf[256];
  for (const auto& p : traj) {
    const auto& t = p.pose.translation();
    const auto& q = p.pose.rotation().quaternion();
    std::snprintf(buf, sizeof(buf), "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", p.timestamp,
                  t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
}

std::vector<ImuMeasurement> read_imu_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open imu csv: " + path);
  std::vector<ImuMeasurement> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0])))
      continue;
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream ss(line);
    long double t_ns;
    ImuMeasurement m;
    if (!(ss >> t_ns >> m.gyro.x() >> m.gyro.y() >> m.gyro.z() >> m.accel.x() >> m.accel.y() >>
          m.accel.z()))
      continue;
    m.timestamp = static_cast<double>(t_ns) * 1e-9;
    if (!out.empty() && m.timestamp <= out.back().timestamp)
      throw DataError("imu csv: timestamps not strictly increasing");
    out.push_back(m);
  }
  return out;
}

void write_imu_csv(const std::string& path, const std::vector<ImuMeasurement>& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write imu csv: " + path);
  out << "#timestamp [ns],w_x [rad s^-1],w_y,w_z,a_x [m s^-2],a_y,a_z\n";
  char buf[320];
  for (const auto& m : data) {
    std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                  static_cast<int64_t>(std::llround(m.timestamp * 1e9)), m.gyro.x(), m.gyro.y(),
                  m.gyro.z(), m.accel.x(), m.accel.y(), m.accel.z());
    out << buf;
  }
}

Alignment umeyama_align(const std::vector<Vec3>& est, const std::vector<Vec3>& gt,
                        AlignMode mode) {
  if (est.size() != gt.size() || est.size() < 3)
    throw InsufficientDataError("alignment needs at least 3 matched positions");
  const double n = static_cast<double>(est.size());

  Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
  for (size_t i = 0; i < est.size(); ++i) {
    mu_e += est[i];
    mu_g += gt[i];
  }
  mu_e /= n;
  mu_g /= n;

  Mat3 cov = Mat3::Zero();
  double var_e = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    cov += (gt[i] - mu_g) * (est[i] - mu_e).transpose();
    var_e += (est[i] - mu_e).squaredNorm();
  }
  cov /= n;
  var_e /= n;

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) S(2, 2) = -1.0;
  const Mat3 R = svd.matrixU() * S * svd.matrixV().transpose();

  Alignment a;
  a.rotation = Rotation3(R);
  if (mode == AlignMode::Sim3 && var_e > 1e-300)
    a.scale = (svd.singularValues().asDiagonal().toDenseMatrix() * S).trace() / var_e;
  a.translation = mu_g - a.scale * (R * mu_e);
  return a;
}

EvaluationResult evaluate(const std::vector<TrajectoryPoint>& est,
                          const std::vector<TrajectoryPoint>& gt, AlignMode mode,
                          double match_tolerance) {
  // Nearest-neighbour timestamp matching (both inputs time-sorted).
  std::vector<Vec3> pe, pg;
  size_t j = 0;
  for (const auto& e : est) {
    while (j + 1 < gt.size() &&
           std::abs(gt[j + 1].timestamp - e.timestamp) <= std::abs(gt[j].timestamp - e.timestamp))
      ++j;
    if (j < gt.size() && std::abs(gt[j].timestamp - e.timestamp) <= match_tolerance) {
      pe.push_back(e.pose.translation());
      pg.push_back(gt[j].pose.translation());
    }
  }
  if (pe.size() < 3) throw InsufficientDataError("evaluate: fewer than 3 matched poses");

  const Alignment a = umeyama_align(pe, pg, mode);
  const Alignment sim = umeyama_align(pe, pg, AlignMode::Sim3);

  double se = 0.0;
  for (size_t i = 0; i < pe.size(); ++i)
    se += (pg[i] - (a.scale * (a.rotation * pe[i]) + a.translation)).squaredNorm();

  EvaluationResult r;
  r.matched = static_cast<int>(pe.size());
  r.rmse_ate = std::sqrt(se / static_cast<double>(pe.size()));
  r.scale_error = std::abs(sim.scale - 1.0) * 100.0;
  for (size_t i = 0; i + 1 < gt.size(); ++i)
    r.length += (gt[i + 1].pose.translation() - gt[i].pose.translation()).norm();
  r.drift = r.length > 0 ? r.rmse_ate * 100.0 / r.length : 0.0;
  return r;
}

}  // namespace vifg
