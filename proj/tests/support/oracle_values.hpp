#pragma once

// Generated by tests/oracles/gen_oracles.py; do not edit.

#include <limits>
#include <vector>

namespace oracle {

struct MarginCase { double alpha, sigma, gamma_min, gamma_max, phase_deg; };
inline const std::vector<MarginCase> kMarginCases = {
  {0.353, 0.0, 0.6999575010624736, 1.4286581663630842, 20.019228137609673},
  {0.0, 0.3, 1.0, 1.0, 0.0},
  {2.0, 0.0, 0.0, std::numeric_limits<double>::infinity(), 90.00000000000016},
  {0.5, 0.5, 0.6363636363636364, 1.8, 28.28553496636411},
  {0.8, -0.5, 0.33333333333333326, 2.0, 44.415308597192976},
  {1.0, 0.0, 0.3333333333333333, 3.0, 53.130102354155916},
  {0.3, 1.0, 0.7692307692307692, 1.4285714285714286, 17.25385311735728},
};

inline const std::vector<std::vector<double>> kRodMass = {{1.2000000000000002, 0.13333333333333333}, {0.13333333333333333, 0.12000000000000001}};
inline constexpr double kRodK22 = 6283.185307179586;
inline const std::vector<std::vector<double>> kFlexA = {{0.0, 0.0, 1.0, 0.0}, {0.0, 0.0, 0.0, 1.0}, {0.0, 6637.1675780066025, 0.0, 0.9507042253521124}, {0.0, -59734.50820205944, 0.0, -8.556338028169014}};
inline const std::vector<std::vector<double>> kFlexB = {{0.0}, {0.0}, {0.9507042253521126}, {-1.056338028169014}};
inline const std::vector<std::vector<double>> kRigidA = {{0.0, 1.0}, {0.0, 0.0}};
inline const std::vector<std::vector<double>> kRigidB = {{0.0}, {0.8333333333333333}};
inline constexpr double kFlexMaxRealNonzero = -4.2781690140845114;
inline const std::vector<std::vector<double>> kFlexX0 = {{0.5, -0.2, 0.1, 1.0}};
inline const std::vector<std::vector<double>> kFlexExpmHalfX0 = {{0.580861560716687, 0.02224595354982094, 0.011640668009211999, 1.7952339879171015}};

inline const std::vector<std::vector<double>> kLti_A_k = {{-6.999999999999994, 1.0}, {-13.499999999999977, -2.5}};
inline const std::vector<std::vector<double>> kLti_B_ky = {{6.999999999999994}, {11.999999999999977}};
inline const std::vector<std::vector<double>> kLti_C_ku = {{-1.8000000000000005, -3.0000000000000004}};
inline const std::vector<std::vector<double>> kLti_D_kuy = {{0.0}};
inline constexpr double kLtiMaxAlpha = 0.879296875;
inline constexpr double kLtiMaxAlphaSkew = 0.78115234375;
inline const std::vector<std::vector<double>> kRinn_A_k = {{-6.999999999999994, 1.0}, {-13.499999999999977, -2.5}};
inline const std::vector<std::vector<double>> kRinn_B_kw = {{0.00036904600724477226, 0.08962366125254097, -0.08224135660866527}, {-0.26717755162718226, -0.13640123555151676, -0.2974939664989387}};
inline const std::vector<std::vector<double>> kRinn_B_ky = {{6.999999999999994}, {11.999999999999977}};
inline const std::vector<std::vector<double>> kRinn_C_kv = {{0.018043080779231543, 0.40206457366636006}, {-0.14766195556539888, -0.18614246994598213}, {0.14695261505555945, 0.10706610244801822}};
inline const std::vector<std::vector<double>> kRinn_D_kvw = {{0.0, 0.0, 0.0}, {0.20859095833748634, 0.0, 0.0}, {-0.5703668219402532, -0.38686132193549283, 0.0}};
inline const std::vector<std::vector<double>> kRinn_D_kvy = {{-0.07052733932240438}, {-0.3802339444331109}, {0.08137930764651045}};
inline const std::vector<std::vector<double>> kRinn_C_ku = {{-1.8000000000000005, -3.0000000000000004}};
inline const std::vector<std::vector<double>> kRinn_D_kuw = {{0.047025325987267545, -0.056079283388986316, -0.7550279132461539}};
inline const std::vector<std::vector<double>> kRinn_D_kuy = {{0.0}};
inline constexpr double kRinnMaxAlpha = 0.67568359375;

}  // namespace oracle
