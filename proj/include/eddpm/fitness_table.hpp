#pragma once

// Generated from data/fitness_weights_v1.csv. Do not edit by hand.

#include <array>

namespace eddpm {

inline constexpr int kFitnessTableVersion = 1;

// Row = sequence position (20), column = token id (20).
inline constexpr std::array<std::array<double, 20>, 20> kFitnessWeights{{
    {0.017521, -0.003777, 0.042589, -0.092167, 0.051958, 0.009844, -0.018251, 0.039041, -0.103393, 0.021188, -0.018615, 0.060660, 0.062936, -0.032273, -0.032641, -0.069943, -0.022534, 0.054388, 0.091758, 0.048092},
    {0.034613, -0.028075, 0.045797, -0.024479, 0.048844, 0.018119, 0.091671, 0.046262, 0.127300, 0.003832, 0.084718, 0.047839, 0.150071, -0.104128, 0.092938, -0.038928, -0.028158, 0.030919, -0.072758, -0.050804},
    {-0.002930, 0.009789, -0.100072, -0.028505, 0.022057, 0.023029, -0.013822, 0.031911, -0.003474, 0.113729, -0.024024, 0.036301, -0.001822, 0.091570, -0.035308, 0.093101, -0.050854, -0.062784, -0.005913, 0.038596},
    {-0.073485, -0.002836, 0.031919, 0.029724, 0.093029, 0.086686, 0.055320, 0.095660, 0.097487, -0.044869, 0.184026, 0.028795, -0.009906, 0.073893, -0.001751, 0.075769, -0.051278, 0.082592, -0.055619, 0.058301},
    {0.017380, -0.002648, 0.042830, -0.007777, -0.021439, 0.059633, 0.166374, -0.037129, 0.112455, 0.107341, -0.045628, 0.045412, 0.068605, -0.031091, 0.107178, 0.093192, 0.150202, 0.059280, 0.097925, 0.158100},
    {0.046299, -0.002560, -0.068614, 0.052098, -0.055851, 0.108462, 0.042420, 0.088547, 0.043500, 0.118234, 0.000487, 0.035674, 0.129474, -0.055232, 0.045572, 0.099955, -0.041699, -0.016421, -0.054649, 0.114233},
    {0.019037, 0.010298, -0.065948, -0.041717, 0.096570, 0.019031, 0.004341, 0.087216, -0.030745, 0.144292, 0.006611, -0.003451, 0.013771, 0.034789, 0.080912, -0.016360, -0.025058, 0.034846, 0.055745, 0.093146},
    {-0.000930, 0.099382, -0.038667, 0.128478, -0.043682, 0.026201, 0.045764, 0.102589, 0.133647, 0.035615, 0.163903, -0.024745, 0.054921, 0.015735, 0.071967, -0.033940, -0.044082, 0.121348, 0.106123, 0.071181},
    {-0.016595, 0.073332, 0.063263, 0.117895, 0.048378, -0.079981, 0.017169, 0.030288, 0.087237, 0.014980, -0.041330, 0.112124, 0.058986, -0.044054, -0.013928, 0.096057, -0.061559, 0.099449, 0.033784, 0.021619},
    {0.092370, 0.002725, 0.036070, 0.145794, -0.026506, 0.158765, -0.084956, -0.027311, 0.094790, -0.013859, 0.010077, 0.087055, 0.098743, 0.066242, -0.005417, 0.075847, 0.042885, 0.114124, 0.059283, -0.023106},
    {0.023483, -0.075660, 0.075916, 0.063255, 0.033499, -0.061296, 0.005172, 0.079594, 0.019390, 0.040540, 0.111761, 0.076209, -0.078885, 0.057669, -0.032828, -0.122390, 0.112789, -0.071024, 0.010271, 0.118973},
    {0.081040, 0.027884, -0.029493, 0.052769, 0.027451, 0.089266, 0.059170, 0.082854, -0.072276, -0.027493, 0.043291, 0.057825, -0.011178, -0.016567, 0.030314, 0.040874, 0.168654, 0.005518, 0.069538, -0.086812},
    {0.025219, 0.009875, -0.057326, -0.035243, -0.012643, -0.022135, -0.099669, 0.009704, 0.025321, 0.010924, 0.088775, 0.020311, 0.039093, 0.029700, 0.040316, -0.041433, 0.012251, 0.156707, 0.054871, 0.020808},
    {0.000925, 0.058484, 0.032589, 0.047224, 0.093001, 0.042227, 0.025933, -0.010447, -0.059926, 0.061845, 0.057077, -0.013651, -0.006618, -0.043775, -0.036550, 0.008017, 0.028018, 0.092866, 0.071196, -0.005726},
    {0.088456, -0.103196, 0.004890, 0.065732, 0.134616, -0.082066, -0.051730, -0.002485, -0.076980, 0.028898, 0.050234, 0.013503, -0.029210, 0.162482, 0.141629, 0.053363, 0.134085, -0.022911, -0.060212, 0.049747},
    {0.157484, 0.016325, 0.084580, 0.119654, 0.035284, 0.090628, -0.013718, 0.121829, 0.061452, 0.036885, -0.011560, -0.166206, 0.054349, 0.032400, 0.024125, 0.004594, 0.163135, 0.026169, 0.026523, 0.031956},
    {-0.042293, -0.005075, 0.008276, 0.054203, 0.073764, -0.020283, 0.105622, -0.133868, 0.137381, 0.077931, 0.089604, 0.041872, 0.060930, 0.055211, 0.008066, -0.030943, 0.061283, 0.050929, -0.014535, 0.036272},
    {-0.018292, 0.198579, 0.070201, 0.077065, 0.095599, -0.211573, 0.034450, 0.110118, -0.044901, 0.057498, 0.074151, -0.053781, 0.248665, 0.039763, 0.029965, 0.037244, 0.123461, 0.215026, 0.003624, -0.090209},
    {0.078020, 0.051553, 0.126730, -0.062675, 0.012202, 0.034569, 0.019005, 0.007716, -0.000153, 0.149430, 0.009030, 0.113608, 0.025058, 0.077475, 0.114900, 0.070273, -0.116735, -0.046748, -0.013532, 0.075631},
    {-0.024883, -0.034197, 0.124099, 0.180264, -0.039968, 0.012708, 0.037346, -0.048055, -0.004152, -0.085838, 0.058721, 0.012119, -0.063298, -0.125302, 0.116878, 0.031107, -0.129339, 0.035648, 0.181285, 0.028144},
}};

}  // namespace eddpm
